#pragma once

#include "shotvae/errors.hpp"
#include "shotvae/rng.hpp"
#include "shotvae/tensor.hpp"
#include "shotvae/ops.hpp"
#include "shotvae/distributions.hpp"
#include "shotvae/model.hpp"
#include "shotvae/objectives.hpp"
#include "shotvae/data.hpp"
#include "shotvae/verification.hpp"
#include "shotvae/config.hpp"
#include "shotvae/checkpoint.hpp"
#include "shotvae/image.hpp"
#include "shotvae/trainer.hpp"
