// Command-line front end: trace synthesis, offline replay, gater training,
// the ablation harness and the NDJSON socket service.

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "semwarm/pipeline.hpp"
#include "semwarm/server.hpp"

using namespace semwarm;

static PipelineConfig load_pipeline_config(const std::string& path, int64_t seed_override) {
    ConfigMap cfg = path.empty() ? ConfigMap{} : ConfigMap::parse_file(path);
    if (seed_override >= 0) cfg.set("seed", std::to_string(seed_override));
    return PipelineConfig::from_config(cfg);
}

static void print_summary(const RunReport& r, const Pipeline& p) {
    std::cout << "requests:        " << r.outcomes.size() << "\n"
              << "speedup:         " << r.speedup << "\n"
              << "mean quality:    " << r.mean_quality << "\n"
              << "mean reward:     " << r.mean_reward << "\n"
              << "hit rate:        " << r.hit_rate << "\n"
              << "p95 latency (s): " << r.p95_latency_s << "\n"
              << "refinements:     " << r.refinements << "\n"
              << "selector overhead (ms/request): " << p.mean_selector_overhead_ms() << "\n"
              << "gater overhead (ms/request):    " << p.mean_gater_overhead_ms() << "\n";
}

static std::atomic<bool> g_shutdown{false};
static void handle_signal(int) { g_shutdown = true; }

int main(int argc, char** argv) {
    CLI::App app{"warm-start serving pipeline for iterative audio generation"};
    app.require_subcommand(1);

    // ---- synth-trace ----
    auto* synth = app.add_subcommand("synth-trace", "generate a synthetic request trace");
    size_t n_prompts = 1000;
    double dup_rate = 0.9;
    size_t clusters = 16;
    size_t dim = 64;
    double arrival_rate = 1.2;
    std::string out_path;
    int64_t seed = 1;
    synth->add_option("--prompts", n_prompts, "number of requests");
    synth->add_option("--dup-rate", dup_rate, "near-duplicate fraction");
    synth->add_option("--clusters", clusters, "cluster count");
    synth->add_option("--dim", dim, "embedding dimension");
    synth->add_option("--rate", arrival_rate, "Poisson arrival rate (req/s)");
    synth->add_option("--out", out_path, "output trace file")->required();
    synth->add_option("--seed", seed, "random seed");

    // ---- replay ----
    auto* replay = app.add_subcommand("replay", "replay a trace against the pipeline");
    std::string trace_path, config_path, report_path, records_out;
    int64_t replay_seed = -1;
    replay->add_option("--trace", trace_path, "trace file")->required();
    replay->add_option("--config", config_path, "key=value config file");
    replay->add_option("--report", report_path, "write the run report here");
    replay->add_option("--seed", replay_seed, "override the config seed");
    replay->add_option("--emit-records", records_out,
                       "write counterfactual gater training records for every hit");

    // ---- train-gater ----
    auto* train = app.add_subcommand("train-gater", "offline bandit training");
    std::string records_path, model_out;
    int epochs = 10;
    int64_t train_seed = 1;
    train->add_option("--records", records_path, "training records (jsonl)")->required();
    train->add_option("--epochs", epochs, "training epochs");
    train->add_option("--out", model_out, "output model snapshot")->required();
    train->add_option("--seed", train_seed, "random seed");

    // ---- serve ----
    auto* serve = app.add_subcommand("serve", "NDJSON socket service");
    std::string addr = "127.0.0.1:7733";
    std::string serve_config, snapshot_dir;
    int64_t serve_seed = -1;
    serve->add_option("--addr", addr, "HOST:PORT to bind");
    serve->add_option("--config", serve_config, "key=value config file");
    serve->add_option("--snapshot-dir", snapshot_dir, "cache snapshot directory (flushed on shutdown)");
    serve->add_option("--seed", serve_seed, "override the config seed");

    // ---- ablate ----
    auto* ablate = app.add_subcommand("ablate", "run pipeline variants over one trace");
    std::string ablate_trace, ablate_config, report_dir;
    std::vector<std::string> variants;
    int64_t ablate_seed = -1;
    ablate->add_option("--trace", ablate_trace, "trace file")->required();
    ablate->add_option("--config", ablate_config, "key=value config file");
    ablate->add_option("--variant", variants,
                       "variants to run: full, no-cache, no-rs, rule-skip/no-sg "
                       "(default: all four)");
    ablate->add_option("--report-dir", report_dir, "write per-variant reports here");
    ablate->add_option("--seed", ablate_seed, "override the config seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            WorkloadConfig wc;
            wc.n_prompts = n_prompts;
            wc.near_duplicate_rate = dup_rate;
            wc.cluster_count = clusters;
            wc.dim = dim;
            wc.arrival_rate_hz = arrival_rate;
            auto trace = synth_workload(wc, static_cast<uint64_t>(seed));
            save_trace(out_path, trace);
            std::cout << "wrote " << trace.size() << " requests to " << out_path << "\n";
        } else if (*replay) {
            PipelineConfig cfg = load_pipeline_config(config_path, replay_seed);
            auto trace = load_trace(trace_path);
            Pipeline pipeline(cfg);

            std::vector<TrainingRecord> records;
            if (!records_out.empty()) {
                pipeline.set_record_sink([&](const EmbeddingVector& prompt,
                                             const EmbeddingVector& e_cache, int total_steps) {
                    uint64_t rec_seed = derive_seed(cfg.seed, 0x524543ULL, records.size());
                    records.push_back(counterfactual_record(records.size() + 1, prompt, e_cache,
                                                            total_steps, rec_seed, cfg.sim));
                });
            }

            RunReport report = pipeline.replay(trace);
            if (!report_path.empty()) save_report(report_path, report);
            if (!records_out.empty()) {
                save_records(records_out, records);
                std::cout << "wrote " << records.size() << " training records to " << records_out
                          << "\n";
            }
            print_summary(report, pipeline);
        } else if (*train) {
            auto records = load_records(records_path);
            BanditModel model = BanditModel::zeros();
            Rng rng(static_cast<uint64_t>(train_seed));
            TrainStats stats = train_offline(model, records, epochs, rng);
            model.save(model_out);
            std::cout << "trained on " << records.size() << " records for " << epochs
                      << " epochs\n"
                      << "loss: " << stats.initial_loss << " -> " << stats.final_loss << "\n"
                      << "model written to " << model_out << "\n";
        } else if (*serve) {
            size_t colon = addr.rfind(':');
            if (colon == std::string::npos) throw std::runtime_error("--addr must be HOST:PORT");
            ServerOptions opts;
            opts.host = addr.substr(0, colon);
            opts.port = std::stoi(addr.substr(colon + 1));
            opts.snapshot_dir = snapshot_dir;
            SocketServer server(load_pipeline_config(serve_config, serve_seed), opts);
            server.start();
            std::cout << "listening on " << opts.host << ":" << server.port() << "\n";

            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            while (!g_shutdown) {
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
            }
            std::cout << "shutting down\n";
            server.stop();
        } else if (*ablate) {
            if (variants.empty()) variants = {"no-cache", "rule-skip", "no-rs", "full"};
            PipelineConfig cfg = load_pipeline_config(ablate_config, ablate_seed);
            auto trace = load_trace(ablate_trace);
            auto results = run_ablation(trace, cfg, variants);
            std::cout << ablation_table(results);
            if (!report_dir.empty()) {
                for (const auto& [name, report] : results) {
                    save_report(report_dir + "/" + name + ".jsonl", report);
                }
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
