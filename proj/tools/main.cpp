#include <iostream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "t2p/tape.hpp"

namespace {

void print_usage() {
    std::cout <<
        "usage: t2p <command> [--option value ...]\n"
        "\n"
        "commands:\n"
        "  synth    generate synthetic multi-agent scenes\n"
        "           --out DIR [--scenes N] [--agents N] [--duration FRAMES] [--fps HZ]\n"
        "           [--style straight|turn|bimodal|stationary] [--avoidance X] [--seed S]\n"
        "  extract  build world-frame pose sequences from detections + annotations\n"
        "           --inputs DIR --out DIR [--tau PX] [--max_range M] [--min_agents N]\n"
        "           [--stride N] [--window N] [--fps HZ]\n"
        "  train    fit the forecasting model\n"
        "           --data DIR --out DIR [--steps N] [--batch N] [--lr X] [--weight_decay X]\n"
        "           [--seed S] [--tp N] [--tf N] [--modes F] [--radius M|unbounded]\n"
        "           [--checkpoint_every N] [--resume CKPT]\n"
        "  predict  forecast F modes for each scene\n"
        "           --checkpoint CKPT --scene FILE|DIR --out FILE [--tp N] [--tf N] [--modes F]\n"
        "  eval     score forecasts (min-JPE mode selection; JPE/APE/FDE in mm)\n"
        "           --scenes FILE|DIR (--forecast FILE | --checkpoint CKPT)\n"
        "           [--eval-at 1.0,2.0] [--out FILE] [--plot DIR]\n"
        "\n"
        "Every command also accepts --config FILE with key=value lines; explicit\n"
        "flags override the file. The effective configuration is echoed into the\n"
        "output directory. T2P_THREADS caps worker parallelism.\n";
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty() || args[0] == "--help" || args[0] == "help") {
        print_usage();
        return args.empty() ? t2p::cli::kUsageError : t2p::cli::kOk;
    }
    const std::string cmd = args[0];
    args.erase(args.begin());
    try {
        if (cmd == "synth") return t2p::cli::cmd_synth(args);
        if (cmd == "extract") return t2p::cli::cmd_extract(args);
        if (cmd == "train") return t2p::cli::cmd_train(args);
        if (cmd == "predict") return t2p::cli::cmd_predict(args);
        if (cmd == "eval") return t2p::cli::cmd_eval(args);
        std::cerr << "unknown command '" << cmd << "'\n";
        print_usage();
        return t2p::cli::kUsageError;
    } catch (const t2p::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return t2p::cli::kNumericalError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return t2p::cli::kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return t2p::cli::kDataError;
    }
}
