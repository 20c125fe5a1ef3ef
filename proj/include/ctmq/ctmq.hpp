#ifndef CTMQ_CTMQ_HPP
#define CTMQ_CTMQ_HPP

#include "ctmq/autodiff.hpp"
#include "ctmq/checkpoint.hpp"
#include "ctmq/config.hpp"
#include "ctmq/data.hpp"
#include "ctmq/metrics.hpp"
#include "ctmq/model.hpp"
#include "ctmq/ops.hpp"
#include "ctmq/optimizer.hpp"
#include "ctmq/parallel.hpp"
#include "ctmq/quantization.hpp"
#include "ctmq/random.hpp"
#include "ctmq/schedule.hpp"
#include "ctmq/tensor.hpp"
#include "ctmq/trainer.hpp"

#endif  // CTMQ_CTMQ_HPP
