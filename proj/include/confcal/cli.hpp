#pragma once

// Command-line front end. Options are shared by every subcommand and may be
// given on the command line, through CONFCAL_* environment variables, or in
// a flat key=value config file (--config); that is also the precedence order.

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "confcal/commands.hpp"

namespace confcal::cli {

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"confidence extraction, calibration metrics, adaptive retrieval and training sandbox", "confcal"};
    app.set_config("--config", "", "flat key=value config file");
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    RunConfig cfg;
    auto& sb = cfg.sandbox;
    std::vector<double> rewards;
    bool no_preference = false;

    app.add_option("--base-url", cfg.base_url, "chat-completions endpoint base URL")->envname("CONFCAL_BASE_URL");
    app.add_option("--api-key-env", cfg.api_key_env, "environment variable holding the API key")
        ->envname("CONFCAL_API_KEY_ENV");
    app.add_option("--model", cfg.model_name, "model name sent with every request")->envname("CONFCAL_MODEL");
    app.add_option("--mock-script", cfg.mock_script, "JSONL script for the offline mock backend")
        ->envname("CONFCAL_MOCK_SCRIPT");
    app.add_option("--max-retries", cfg.max_retries)->envname("CONFCAL_MAX_RETRIES");
    app.add_option("--timeout-ms", cfg.timeout_ms)->envname("CONFCAL_TIMEOUT_MS");
    app.add_option("--backoff-ms", cfg.backoff_ms, "initial retry backoff")->envname("CONFCAL_BACKOFF_MS");
    app.add_option("--task", cfg.task_path, "task spec JSON")->envname("CONFCAL_TASK");
    app.add_option("--dataset", cfg.dataset_path, "dataset JSONL")->envname("CONFCAL_DATASET");
    app.add_option("--confidence-mode", cfg.confidence_mode, "normalized | raw | both")
        ->envname("CONFCAL_CONFIDENCE_MODE");
    app.add_option("--bins", cfg.bins, "equal-mass bin count")->envname("CONFCAL_BINS");
    app.add_option("--missing-policy", cfg.missing_policy, "error | neutral | skip")->envname("CONFCAL_MISSING_POLICY");
    app.add_option("--readout", cfg.readout, "first_token | full_sequence")->envname("CONFCAL_READOUT");
    app.add_option("--concurrency", cfg.concurrency, "max in-flight requests")->envname("CONFCAL_CONCURRENCY");
    app.add_option("--cache", cfg.cache_path, "response cache JSONL")->envname("CONFCAL_CACHE");
    app.add_option("--out", cfg.output_dir, "output directory")->envname("CONFCAL_OUT");
    app.add_option("--seed", cfg.seed)->envname("CONFCAL_SEED");
    app.add_option("--retriever", cfg.retriever, "'static' or a retriever URL")->envname("CONFCAL_RETRIEVER");
    app.add_option("--retrieval-top-k", cfg.retrieval_top_k)->envname("CONFCAL_RETRIEVAL_TOP_K");
    app.add_option("--max-documents", cfg.max_documents)->envname("CONFCAL_MAX_DOCUMENTS");
    app.add_option("--max-doc-tokens", cfg.max_doc_tokens)->envname("CONFCAL_MAX_DOC_TOKENS");
    app.add_option("--taus", cfg.taus, "comma-separated thresholds")->delimiter(',')->envname("CONFCAL_TAUS");

    app.add_option("--data-distribution", sb.data_distribution, "sandbox P_data, comma-separated")
        ->delimiter(',')
        ->envname("CONFCAL_DATA_DISTRIBUTION");
    app.add_option("--steps", sb.steps)->envname("CONFCAL_STEPS");
    app.add_option("--lr", sb.lr)->envname("CONFCAL_LR");
    app.add_option("--batch-size", sb.batch_size)->envname("CONFCAL_BATCH_SIZE");
    app.add_option("--clip-eps", sb.clip_eps)->envname("CONFCAL_CLIP_EPS");
    app.add_option("--kl-coef", sb.kl_coef)->envname("CONFCAL_KL_COEF");
    app.add_option("--ppo-epochs", sb.ppo_epochs)->envname("CONFCAL_PPO_EPOCHS");
    app.add_option("--dpo-beta", sb.dpo_beta)->envname("CONFCAL_DPO_BETA");
    app.add_option("--rewards", rewards, "per-option rewards, comma-separated")
        ->delimiter(',')
        ->envname("CONFCAL_REWARDS");
    app.add_flag("--no-preference", no_preference, "give the preference arm no pairs")
        ->envname("CONFCAL_NO_PREFERENCE");
    app.add_option("--trace-every", sb.trace_every)->envname("CONFCAL_TRACE_EVERY");

    auto* eval = app.add_subcommand("eval", "score a dataset and write records, report and calibration curve");
    auto* sweep_cmd = app.add_subcommand("sweep", "adaptive retrieval threshold sweep");
    auto* bins_cmd = app.add_subcommand("ece-from-bins", "ECE and accuracy from a per-bin CSV");
    std::string bin_csv;
    bins_cmd->add_option("csv", bin_csv, "count,mean_accuracy,mean_confidence rows")->required();
    auto* sandbox_cmd = app.add_subcommand("sandbox", "train the toy policy three ways and trace calibration");
    auto* report_cmd = app.add_subcommand("report", "re-render a report JSON as calibration-curve CSV");
    std::string report_path;
    report_cmd->add_option("report", report_path, "report JSON")->required();
    for (auto* sub : {eval, sweep_cmd, bins_cmd, sandbox_cmd, report_cmd}) sub->fallthrough();

    // environment values enter as leading arguments, ahead of any config file
    std::vector<std::string> from_env;
    for (const auto* opt : app.get_options()) {
        if (opt->get_envname().empty() || opt->get_lnames().empty()) continue;
        const char* value = std::getenv(opt->get_envname().c_str());
        if (value == nullptr) continue;
        const std::string flag = "--" + opt->get_lnames().front();
        const bool on_command_line = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
            return a == flag || a.starts_with(flag + "=");
        });
        if (!on_command_line) from_env.push_back(flag + "=" + value);
    }
    args.insert(args.begin(), from_env.begin(), from_env.end());

    std::reverse(args.begin(), args.end());
    try {
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_config;
    }
    if (!rewards.empty()) sb.rewards = rewards;
    sb.preference_signal = !no_preference;

    if (eval->parsed()) return cmd_eval(cfg, out, err);
    if (sweep_cmd->parsed()) return cmd_sweep(cfg, out, err);
    if (bins_cmd->parsed()) return cmd_ece_from_bins(bin_csv, out, err);
    if (sandbox_cmd->parsed()) return cmd_sandbox(cfg, out, err);
    const bool out_given = app.get_option("--out")->count() > 0 || std::getenv("CONFCAL_OUT") != nullptr;
    return cmd_report(report_path, out_given ? cfg.output_dir : std::string(), out, err);
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(std::move(args));
}

} // namespace confcal::cli
