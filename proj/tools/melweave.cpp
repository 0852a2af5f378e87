#include <iostream>

#include <CLI11.hpp>

#include "melweave/commands.hpp"

int main(int argc, char** argv) {
    using namespace melweave;
    CLI::App app{"melweave: streaming interleaved text-to-mel engine"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions global;
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    app.add_option("--config", config_path, "engine config (JSON)");
    auto* seed_opt = app.add_option("--seed", seed, "overrides corpus, training and runtime seeds");
    app.add_option("--out-dir", out_dir, "directory for outputs; relative config paths resolve here");
    app.add_flag("--quick", global.quick, "reduced ranges and step counts");

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    auto* train = app.add_subcommand("train", "train on the corpus and save the best checkpoint");

    SynthOptions synth_opts;
    std::string synth_ckpt, token_file, synth_out;
    auto* synth = app.add_subcommand("synth", "stream text through a checkpoint and write a MELF file");
    synth->add_option("--checkpoint", synth_ckpt, "checkpoint path (default: config paths.checkpoint)");
    synth->add_option("--tokens", synth_opts.tokens, "comma separated token ids");
    synth->add_option("--token-file", token_file, "file of whitespace or comma separated ids");
    synth->add_option("--d-llm", synth_opts.d_llm_ms, "upstream per-token delay in ms");
    synth->add_option("--prompt-mode", synth_opts.prompt_mode, "none | continuation | cross-sentence")
        ->check(CLI::IsMember({"none", "continuation", "cross-sentence"}));
    synth->add_option("--prompt-id", synth_opts.prompt_id, "corpus utterance used as prompt");
    synth->add_option("--prompt-tokens", synth_opts.prompt_tokens, "continuation: tokens whose frames are given");
    synth->add_option("--output", synth_out, "MELF output path")->default_val("synth.melf");
    auto* k_opt = synth->add_option("--sample-times", "latent draws per step");
    auto* sigma_opt = synth->add_option("--sigma", "fixed latent standard deviation");

    BenchOptions bench_opts;
    std::string bench_ckpt;
    auto* bench = app.add_subcommand("bench", "latency report and ablation sweeps");
    bench->add_option("--checkpoint", bench_ckpt, "checkpoint (default: random init)");
    bench->add_option("--scenario", bench_opts.scenario, "fpl-a | fpl-l | both")
        ->check(CLI::IsMember({"fpl-a", "fpl-l", "both"}));
    bench->add_option("--sweep", bench_opts.sweep, "interleave_ratio | reduction_factor | sample_times");
    bench->add_option("--values", bench_opts.values, "comma separated sweep values, e.g. 1:1,1:4 or 1,2,4");
    auto* trials_opt = bench->add_option("--trials", "trials per report");
    bench->add_option("--clock", bench_opts.clock, "virtual | wall")->check(CLI::IsMember({"virtual", "wall"}));
    bench->add_option("--tokens", bench_opts.tokens, "token ids for latency runs");
    bench->add_flag("--forced-length", bench_opts.forced_length, "generate reference lengths in sweeps");

    CheckCommandOptions check_opts;
    std::string check_ckpt;
    auto* check = app.add_subcommand("check", "run the invariant suite");
    check->add_option("--checkpoint", check_ckpt, "also verify this checkpoint file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (!config_path.empty()) global.config = config_path;
    if (seed_opt->count() > 0) global.seed = seed;
    global.out_dir = out_dir;

    if (*gen) return cmd_gen_data(global, std::cout, std::cerr);
    if (*train) return cmd_train(global, std::cout, std::cerr);
    if (*synth) {
        if (!synth_ckpt.empty()) synth_opts.checkpoint = synth_ckpt;
        if (!token_file.empty()) synth_opts.token_file = token_file;
        synth_opts.output = synth_out;
        if (k_opt->count() > 0) synth_opts.sample_times = k_opt->as<int>();
        if (sigma_opt->count() > 0) synth_opts.sigma = sigma_opt->as<double>();
        if (synth_opts.prompt_mode != "none" && synth_opts.prompt_id.empty()) {
            std::cerr << "error: --prompt-mode needs --prompt-id\n";
            return 1;
        }
        return cmd_synth(global, synth_opts, std::cout, std::cerr);
    }
    if (*bench) {
        if (!bench_ckpt.empty()) bench_opts.checkpoint = bench_ckpt;
        if (trials_opt->count() > 0) bench_opts.trials = trials_opt->as<int>();
        if (bench_opts.sweep.empty() != bench_opts.values.empty()) {
            std::cerr << "error: --sweep and --values go together\n";
            return 1;
        }
        return cmd_bench(global, bench_opts, std::cout, std::cerr);
    }
    if (!check_ckpt.empty()) check_opts.checkpoint = check_ckpt;
    return cmd_check(global, check_opts, std::cout, std::cerr);
}
