#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace t2p::cli {

// exit codes shared by every subcommand
constexpr int kOk = 0;
constexpr int kUsageError = 1;
constexpr int kDataError = 2;
constexpr int kNumericalError = 3;

// key=value options merged from a config file and command-line flags; flags
// win. Unknown keys are rejected against the command's declared key set.
struct RunConfig {
    std::map<std::string, std::string> values;

    bool has(const std::string& k) const { return values.count(k) != 0; }
    std::string str(const std::string& k, const std::string& fallback = "") const;
    double num(const std::string& k, double fallback) const;
    int integer(const std::string& k, int fallback) const;
    std::uint64_t seed(const std::string& k, std::uint64_t fallback) const;

    void reject_unknown(const std::set<std::string>& allowed) const;
    std::string canonical() const;  // sorted key=value lines
};

RunConfig parse_run_config(const std::vector<std::string>& args,
                           const std::string& config_file_key = "config");

void echo_config(const RunConfig& cfg, const std::string& out_dir);

int cmd_synth(const std::vector<std::string>& args);
int cmd_extract(const std::vector<std::string>& args);
int cmd_train(const std::vector<std::string>& args);
int cmd_predict(const std::vector<std::string>& args);
int cmd_eval(const std::vector<std::string>& args);

}  // namespace t2p::cli
