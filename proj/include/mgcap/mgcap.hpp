#pragma once

// Umbrella header.

#include "mgcap/backbone.hpp"
#include "mgcap/canonical.hpp"
#include "mgcap/checkpoint.hpp"
#include "mgcap/commands.hpp"
#include "mgcap/config.hpp"
#include "mgcap/dataset.hpp"
#include "mgcap/error.hpp"
#include "mgcap/gradcheck.hpp"
#include "mgcap/head.hpp"
#include "mgcap/image.hpp"
#include "mgcap/linalg.hpp"
#include "mgcap/model.hpp"
#include "mgcap/optim.hpp"
#include "mgcap/rng.hpp"
#include "mgcap/sop.hpp"
#include "mgcap/spectral.hpp"
#include "mgcap/tensor.hpp"
#include "mgcap/trainer.hpp"
