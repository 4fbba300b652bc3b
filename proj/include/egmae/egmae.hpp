#pragma once

#include "egmae/errors.hpp"
#include "egmae/tensor.hpp"
#include "egmae/ops.hpp"
#include "egmae/rng.hpp"
#include "egmae/parallel.hpp"
#include "egmae/image.hpp"
#include "egmae/entropy.hpp"
#include "egmae/model.hpp"
#include "egmae/checkpoint.hpp"
#include "egmae/data.hpp"
#include "egmae/optim.hpp"
#include "egmae/metrics.hpp"
#include "egmae/config.hpp"
#include "egmae/evaluate.hpp"
#include "egmae/train.hpp"
#include "egmae/synthetic.hpp"
#include "egmae/pipeline.hpp"
