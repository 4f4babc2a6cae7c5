#pragma once

// Subcommand bodies. Each returns a process exit code: 0 on success, 1 for
// configuration errors, 2 for endpoint errors, 3 for data errors.

#include <filesystem>
#include <functional>
#include <iostream>
#include <string>

#include <fmt/format.h>

#include "confcal/adaptive_rag.hpp"
#include "confcal/config.hpp"
#include "confcal/report_io.hpp"
#include "confcal/sandbox.hpp"

namespace confcal {

enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_endpoint = 2, exit_data = 3 };

inline int exit_code_for(ErrorCategory c) noexcept {
    switch (c) {
        case ErrorCategory::config: return exit_config;
        case ErrorCategory::endpoint: return exit_endpoint;
        case ErrorCategory::data: return exit_data;
    }
    return exit_data;
}

/// Runs `body`, printing any failure to `err` and mapping it to an exit code.
inline int guarded(std::ostream& err, const std::function<void()>& body) {
    try {
        body();
        return exit_ok;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.category());
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return exit_data;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_data;
    }
}

struct EvalOutputs {
    std::filesystem::path records;
    std::filesystem::path report;
    std::filesystem::path curve;
};

inline EvalOutputs eval_outputs(const std::filesystem::path& dir) {
    return {dir / "records.jsonl", dir / "report.json", dir / "calibration_curve.csv"};
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        validate_eval(cfg);
        const auto task = load_task_spec(cfg.task_path);
        const auto examples = load_dataset(cfg.dataset_path, task, context_budget(cfg));
        auto client = make_client(cfg);
        const auto mode = confidence_mode_from_string(cfg.confidence_mode);
        const auto records = run_eval(task, examples, client, mode);
        const auto report = build_report(records, cfg.bins);

        const auto paths = eval_outputs(cfg.output_dir);
        write_text(paths.records, records_jsonl(records));
        write_text(paths.report, to_json(report).dump(2) + "\n");
        write_text(paths.curve, calibration_curve_csv(report));
        out << fmt::format("task={} n={} accuracy={} ece={} auroc={}\n", report.task_id, report.n,
                           fixed6(report.accuracy), fixed6(report.ece),
                           report.auroc ? fixed6(*report.auroc) : std::string("NA"));
    });
}

inline int cmd_sweep(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        validate_sweep(cfg);
        const auto task = load_task_spec(cfg.task_path);
        const auto examples = load_dataset(cfg.dataset_path, task, context_budget(cfg));
        auto client = make_client(cfg);
        auto retriever = make_retriever(cfg);
        const auto matcher = task.kind == TaskKind::classification ? Matcher::exact : task.matcher;
        const auto result = sweep(examples, cfg.taus, client, *retriever, matcher);
        write_text(std::filesystem::path(cfg.output_dir) / "sweep.csv", sweep_csv(result.rows));
        out << fmt::format("baseline_accuracy={} first_passes={} second_passes={}\n",
                           fixed6(result.baseline_accuracy_pct), result.first_passes, result.second_passes);
    });
}

inline int cmd_ece_from_bins(const std::filesystem::path& csv, std::ostream& out = std::cout,
                             std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        const auto bins = parse_bin_csv(read_text(csv));
        out << fmt::format("ece={}\nweighted_accuracy={}\n", fixed6(ece_from_bins(bins)),
                           fixed6(accuracy_from_bins(bins)));
    });
}

inline int cmd_sandbox(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        validate_sandbox(cfg);
        auto scfg = cfg.sandbox;
        scfg.seed = cfg.seed;
        const auto result = sandbox::run_paradigm_comparison(scfg);
        const std::filesystem::path dir(cfg.output_dir);
        write_text(dir / "sandbox_trace.csv", sandbox::trace_csv(result));
        write_text(dir / "sandbox_summary.json", sandbox::summary_json(scfg, result).dump(2) + "\n");
        out << fmt::format("ce_kl={} advantage_max_prob={} dpo_max_prob={}\n", fixed6(result.ce.rows.back().kl),
                           fixed6(result.advantage.rows.back().max_prob), fixed6(result.dpo.rows.back().max_prob));
    });
}

/// Re-renders a report JSON as calibration-curve CSV, into `out_dir` or onto `out`.
inline int cmd_report(const std::filesystem::path& report_path, const std::string& out_dir,
                      std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        json j;
        try {
            j = json::parse(read_text(report_path));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::schema_violation, report_path.string() + ": " + e.what());
        }
        const auto csv = calibration_curve_csv(report_from_json(j));
        if (out_dir.empty()) {
            out << csv;
        } else {
            write_text(std::filesystem::path(out_dir) / "calibration_curve.csv", csv);
        }
    });
}

} // namespace confcal
