#ifndef SOFTPL_SOFTPL_HPP
#define SOFTPL_SOFTPL_HPP

#include "softpl/atomic_file.hpp"
#include "softpl/coco_io.hpp"
#include "softpl/errors.hpp"
#include "softpl/evaluator.hpp"
#include "softpl/fusion_core.hpp"
#include "softpl/geometry.hpp"
#include "softpl/mmd.hpp"
#include "softpl/parallel.hpp"
#include "softpl/pipeline.hpp"
#include "softpl/random.hpp"
#include "softpl/simulator.hpp"
#include "softpl/soft_scoring.hpp"

#endif // SOFTPL_SOFTPL_HPP
