#pragma once

#include <string>
#include <vector>

#include "vitlab/config.hpp"
#include "vitlab/dataset.hpp"
#include "vitlab/model.hpp"
#include "vitlab/trainer.hpp"

namespace vitlab {

// Subcommands: train | analyze | report | selftest. Returns the process exit
// status; errors print a usage message or the failing path on stderr.
int run_cli(int argc, const char** argv);

// Config-driven factories shared by the CLI and the tests.
Dataset dataset_from_config(const Config& cfg, bool test_split);
ModelSpec spec_from_config(const Config& cfg);
TrainConfig train_config_from_config(const Config& cfg);

// Oracle self-test suites (finite differences, dense Hessian, naive DFT,
// naive CKA); prints one pass/fail line per suite, returns pass count == total.
bool run_selftest(std::ostream& os);

}  // namespace vitlab
