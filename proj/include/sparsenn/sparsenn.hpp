#pragma once

// Umbrella header: feedforward networks with a low-rank output-sparsity
// predictor, fixed-point inference, and a cycle-level model of the 64-PE
// H-tree accelerator that exploits input and output activation sparsity.

#include "sparsenn/arch.hpp"
#include "sparsenn/checkpoint.hpp"
#include "sparsenn/config.hpp"
#include "sparsenn/data.hpp"
#include "sparsenn/errors.hpp"
#include "sparsenn/fixed.hpp"
#include "sparsenn/fx_network.hpp"
#include "sparsenn/matrix.hpp"
#include "sparsenn/network.hpp"
#include "sparsenn/report.hpp"
#include "sparsenn/rng.hpp"
#include "sparsenn/sim.hpp"
#include "sparsenn/svd.hpp"
#include "sparsenn/train.hpp"
