#pragma once

#include "fedcam/attack.hpp"
#include "fedcam/autoencoder.hpp"
#include "fedcam/baselines.hpp"
#include "fedcam/data.hpp"
#include "fedcam/defense.hpp"
#include "fedcam/errors.hpp"
#include "fedcam/experiment.hpp"
#include "fedcam/io.hpp"
#include "fedcam/layercam.hpp"
#include "fedcam/metrics.hpp"
#include "fedcam/nn.hpp"
#include "fedcam/protocol.hpp"
#include "fedcam/seeding.hpp"
#include "fedcam/tensor.hpp"
#include "fedcam/voting.hpp"
