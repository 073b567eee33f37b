#ifndef MLT_MLT_HPP_
#define MLT_MLT_HPP_

#include "mlt/checkpoint.hpp"
#include "mlt/config.hpp"
#include "mlt/data.hpp"
#include "mlt/errors.hpp"
#include "mlt/flops.hpp"
#include "mlt/gradcheck.hpp"
#include "mlt/harness.hpp"
#include "mlt/metrics.hpp"
#include "mlt/model.hpp"
#include "mlt/multilevel.hpp"
#include "mlt/ops.hpp"
#include "mlt/optimizer.hpp"
#include "mlt/report.hpp"
#include "mlt/tape.hpp"
#include "mlt/tensor.hpp"
#include "mlt/training.hpp"

#endif  // MLT_MLT_HPP_
