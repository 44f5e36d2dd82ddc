#pragma once

// Command-line pipeline: synth, preprocess, build-bags, train, evaluate,
// sweep, attention. Every command is deterministic given its configuration
// and seed; outputs carry a config hash for provenance.

#include <filesystem>
#include <string>
#include <vector>

#include "miltremor/ingest.hpp"

namespace miltremor::cli {

// Exit codes: 0 success, 1 usage, 2 data error, 3 runtime failure.
int run(std::vector<std::string> args);
int run(int argc, char** argv);

// Conditioned-session cache entries (100 Hz, trimmed, gravity-removed).
void write_session_bin(const std::filesystem::path& path, const ingest::Session& s,
                       uint64_t config_hash);
ingest::Session read_session_bin(const std::filesystem::path& path);

}  // namespace miltremor::cli
