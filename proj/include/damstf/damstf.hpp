#pragma once

#include "damstf/data.hpp"
#include "damstf/domain_adversarial.hpp"
#include "damstf/errors.hpp"
#include "damstf/meta_constructor.hpp"
#include "damstf/meta_learning.hpp"
#include "damstf/nn.hpp"
#include "damstf/self_training.hpp"
#include "damstf/serialize.hpp"
#include "damstf/theory.hpp"
