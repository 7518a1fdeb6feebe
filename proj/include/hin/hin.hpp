#pragma once

#include "hin/autodiff.hpp"
#include "hin/checkpoint.hpp"
#include "hin/corpus.hpp"
#include "hin/errors.hpp"
#include "hin/gradcheck.hpp"
#include "hin/layers.hpp"
#include "hin/metrics.hpp"
#include "hin/model.hpp"
#include "hin/optim.hpp"
#include "hin/params.hpp"
#include "hin/random.hpp"
#include "hin/synthetic.hpp"
#include "hin/tensor.hpp"
#include "hin/training.hpp"
