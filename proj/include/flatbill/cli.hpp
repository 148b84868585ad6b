#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace flatbill::cli {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;    // bad arguments, config or command
constexpr int kExitNumerical = 3;  // numerical failure budget exceeded

constexpr int kSchemaVersion = 1;

struct RunOptions {
    std::string config_path;  // empty: all defaults
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string out_dir = "out";
    std::vector<std::string> overrides;  // "key=value", dotted keys reach nested objects
    bool progress = true;
};

const std::vector<std::string>& commands();

// Runs one command. The JSON summary goes to out, progress and errors to err.
int run(const std::string& command, const RunOptions& opt, std::ostream& out, std::ostream& err);

// argv-style entry point (without the program name).
int run_args(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string sha256_hex(const std::string& bytes);

}  // namespace flatbill::cli
