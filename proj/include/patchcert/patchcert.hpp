#pragma once

#include "patchcert/adam.hpp"
#include "patchcert/attack.hpp"
#include "patchcert/certifier.hpp"
#include "patchcert/checkpoint.hpp"
#include "patchcert/data.hpp"
#include "patchcert/evaluation.hpp"
#include "patchcert/geometry.hpp"
#include "patchcert/io.hpp"
#include "patchcert/loss.hpp"
#include "patchcert/model.hpp"
#include "patchcert/ops.hpp"
#include "patchcert/parallel.hpp"
#include "patchcert/score_map.hpp"
#include "patchcert/tape.hpp"
#include "patchcert/tensor.hpp"
#include "patchcert/training.hpp"
