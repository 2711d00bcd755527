#pragma once

// Umbrella header: pulls in the whole library.

#include "opstyle/common.hpp"
#include "opstyle/tensor.hpp"
#include "opstyle/rng.hpp"
#include "opstyle/serialize.hpp"
#include "opstyle/image.hpp"
#include "opstyle/config.hpp"
#include "opstyle/nn.hpp"
#include "opstyle/latent.hpp"
#include "opstyle/mapper.hpp"
#include "opstyle/modulation.hpp"
#include "opstyle/synthesis.hpp"
#include "opstyle/perception.hpp"
#include "opstyle/optim.hpp"
#include "opstyle/inversion.hpp"
#include "opstyle/editing.hpp"
#include "opstyle/training.hpp"
#include "opstyle/manifest.hpp"
