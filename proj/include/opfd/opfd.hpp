#pragma once

#include "opfd/common.hpp"
#include "opfd/distill.hpp"
#include "opfd/eval.hpp"
#include "opfd/feeder.hpp"
#include "opfd/grid.hpp"
#include "opfd/groups.hpp"
#include "opfd/opf.hpp"
#include "opfd/prox.hpp"
#include "opfd/qp.hpp"
#include "opfd/rng.hpp"
#include "opfd/scenario.hpp"
#include "opfd/sensitivity.hpp"
#include "opfd/type1.hpp"
#include "opfd/type2.hpp"
