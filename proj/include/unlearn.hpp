#pragma once

#include "unlearn/certify.hpp"
#include "unlearn/config.hpp"
#include "unlearn/datagen.hpp"
#include "unlearn/dataset.hpp"
#include "unlearn/dataset_io.hpp"
#include "unlearn/errors.hpp"
#include "unlearn/glm.hpp"
#include "unlearn/harness.hpp"
#include "unlearn/metrics.hpp"
#include "unlearn/random.hpp"
#include "unlearn/solver.hpp"
#include "unlearn/unlearn.hpp"
