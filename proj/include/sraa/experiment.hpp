#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "sraa/config.hpp"
#include "sraa/data.hpp"
#include "sraa/engine.hpp"
#include "sraa/metrics.hpp"

namespace sraa {

inline std::uint64_t table_seed(const RunConfig& cfg) {
    return derive_seed(cfg.train.seed, {0x7AB1u});
}

/// The semantic table covers all nine classes and depends only on the seed,
/// so every fold of a run shares one table.
inline SemanticTable make_table(const RunConfig& cfg) {
    const SplitPlan plan = SplitPlan::default_plan(cfg.train.seed, 0);
    return SemanticTable::random(plan.all_classes(), cfg.semantic_dim, table_seed(cfg));
}

inline std::filesystem::path fold_data_dir(const RunConfig& cfg, std::size_t fold) {
    return cfg.data_dir / ("fold" + std::to_string(fold));
}

inline std::string arm_name(IncrementMode mode) {
    return mode == IncrementMode::Adaptation ? "sraa" : "ft";
}

inline std::filesystem::path run_out_dir(const RunConfig& cfg, std::size_t fold,
                                         IncrementMode mode) {
    return cfg.out_dir / ("fold" + std::to_string(fold)) /
           (protocol_name(cfg.options.protocol) + "_k" +
            std::to_string(cfg.options.shots) + "_" + arm_name(mode));
}

inline std::vector<std::size_t> folds_of(const RunConfig& cfg) {
    if (cfg.options.fold) return {*cfg.options.fold};
    std::vector<std::size_t> all(9);
    for (std::size_t f = 0; f < all.size(); ++f) all[f] = f;
    return all;
}

/// Writes every episode file and the plan record for one fold. Rerunning
/// with the same config rewrites identical bytes.
inline void generate_fold_data(const RunConfig& cfg, std::size_t fold) {
    const std::filesystem::path dir = fold_data_dir(cfg, fold);
    std::filesystem::create_directories(dir);
    SplitPlan plan = SplitPlan::default_plan(cfg.train.seed, fold);
    plan.shots = cfg.options.shots;

    export_episode(generate_base(plan, cfg.images_per_class), (dir / "base.ep").string());
    for (std::size_t g = 0; g < plan.novel_groups.size(); ++g) {
        export_episode(sample_fewshot(plan, g, cfg.options.shots),
                       (dir / ("fewshot_g" + std::to_string(g) + "_k" +
                               std::to_string(cfg.options.shots) + ".ep"))
                           .string());
    }
    export_episode(generate_eval(plan, cfg.eval_per_class), (dir / "eval.ep").string());

    nlohmann::ordered_json record;
    record["seed"] = plan.seed;
    record["fold"] = fold;
    record["shots"] = cfg.options.shots;
    record["base_classes"] = plan.base_classes;
    record["novel_groups"] = plan.novel_groups;
    record["images_per_class"] = cfg.images_per_class;
    record["eval_per_class"] = cfg.eval_per_class;
    std::ofstream os(dir / "plan.json");
    if (!os) throw IoError("generate_fold_data: cannot write plan record");
    os << record.dump(2) << "\n";
}

inline void generate_data(const RunConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.data_dir);
    make_table(cfg).save(cfg.data_dir / "semantic.tab");
    for (std::size_t fold : folds_of(cfg)) generate_fold_data(cfg, fold);
}

/// The episodes one run trains on, in step order: the base episode first,
/// then one few-shot episode per incremental step.
struct RunData {
    EpisodeSource base;
    std::vector<EpisodeSource> increments;
    Episode eval;
};

inline RunData load_run_data(const RunConfig& cfg, std::size_t fold) {
    const std::filesystem::path dir = fold_data_dir(cfg, fold);
    const std::string k = std::to_string(cfg.options.shots);

    std::vector<Episode> base;
    base.push_back(import_episode((dir / "base.ep").string()));

    Episode g0 = import_episode((dir / ("fewshot_g0_k" + k + ".ep")).string());
    Episode g1 = import_episode((dir / ("fewshot_g1_k" + k + ".ep")).string());

    std::vector<EpisodeSource> increments;
    if (cfg.options.protocol == RunOptions::Protocol::Single) {
        Episode joint = merge_episodes(g0, g1);
        joint.step_tag = 1;
        std::vector<Episode> eps;
        eps.push_back(std::move(joint));
        increments.emplace_back(std::move(eps));
    } else {
        std::vector<Episode> first, second;
        first.push_back(std::move(g0));
        second.push_back(std::move(g1));
        increments.emplace_back(std::move(first));
        increments.emplace_back(std::move(second));
    }

    return {EpisodeSource(std::move(base)), std::move(increments),
            import_episode((dir / "eval.ep").string())};
}

struct StepArtifacts {
    int step = 0;
    MetricsReport report;
    std::string checkpoint;
};

struct RunResult {
    std::filesystem::path dir;
    std::vector<StepArtifacts> steps;
    SummaryRow summary;  // final-step numbers
};

namespace detail {

inline void write_manifest(const RunConfig& cfg, std::size_t fold, IncrementMode mode,
                           std::size_t n_steps, const std::filesystem::path& dir) {
    nlohmann::ordered_json m;
    m["config"] = config_to_json(cfg);
    m["config_hash"] = cfg.hash();
    m["seed"] = cfg.train.seed;
    m["protocol"] = protocol_name(cfg.options.protocol);
    m["shots"] = cfg.options.shots;
    m["fold"] = fold;
    m["arm"] = arm_name(mode);
    nlohmann::ordered_json artifacts;
    std::vector<std::string> ckpts;
    for (std::size_t t = 0; t <= n_steps; ++t) {
        ckpts.push_back("step" + std::to_string(t) + ".ckpt");
    }
    artifacts["checkpoints"] = ckpts;
    artifacts["reports"] = "steps.jsonl";
    artifacts["summary"] = "summary.csv";
    m["artifacts"] = artifacts;
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("run_experiment: cannot write manifest");
    os << m.dump(2) << "\n";
}

}  // namespace detail

/// Executes one full run for one fold and arm: base step, every incremental
/// step, per-step evaluation, checkpoints, and report files. The manifest
/// lands on disk before any training starts.
inline RunResult run_experiment(const RunConfig& cfg, std::size_t fold,
                                const RunData& data, const SemanticTable& table,
                                IncrementMode mode) {
    cfg.validate();
    const std::filesystem::path dir = run_out_dir(cfg, fold, mode);
    std::filesystem::create_directories(dir);
    detail::write_manifest(cfg, fold, mode, data.increments.size(), dir);

    RunResult result;
    result.dir = dir;

    std::vector<nlohmann::ordered_json> records;
    auto record_step = [&](const StepState& state) {
        const MetricsReport report = evaluate_step(state, data.eval);
        const std::string ckpt = "step" + std::to_string(state.step_index) + ".ckpt";
        save_checkpoint(state, cfg.hash(), (dir / ckpt).string());
        records.push_back(report_record(report, fold, cfg.options.shots,
                                        protocol_name(cfg.options.protocol)));
        result.steps.push_back({state.step_index, report, ckpt});
    };

    StepState state = train_base(cfg.train, cfg.encoder, data.base.at(0), table);
    record_step(state);
    for (const EpisodeSource& source : data.increments) {
        state = train_increment(state, cfg.train, source.at(0), table, mode);
        record_step(state);
    }

    write_jsonl((dir / "steps.jsonl").string(), records);
    const MetricsReport& last = result.steps.back().report;
    result.summary = {fold, cfg.options.shots, protocol_name(cfg.options.protocol),
                      last.miou_base, last.miou_novel, last.hm};
    const std::vector<SummaryRow> rows{result.summary};
    write_summary_csv((dir / "summary.csv").string(), rows);
    return result;
}

/// Loads data from disk and runs the requested arms for one fold.
inline std::vector<RunResult> run_fold(const RunConfig& cfg, std::size_t fold,
                                       const SemanticTable& table) {
    const RunData data = load_run_data(cfg, fold);
    std::vector<RunResult> results;
    results.push_back(run_experiment(cfg, fold, data, table, IncrementMode::Adaptation));
    if (cfg.options.with_finetune_baseline) {
        results.push_back(run_experiment(cfg, fold, data, table, IncrementMode::Finetune));
    }
    return results;
}

/// Runs every configured fold, `workers` at a time. Folds write to disjoint
/// directories and share only the immutable semantic table.
inline std::vector<RunResult> run_all_folds(const RunConfig& cfg, std::size_t workers) {
    cfg.validate();
    if (workers == 0) throw ConfigError("run_all_folds: workers must be at least 1");
    const SemanticTable table = make_table(cfg);
    const std::vector<std::size_t> folds = folds_of(cfg);

    std::vector<std::vector<RunResult>> per_fold(folds.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;

    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < folds.size(); i = next.fetch_add(1)) {
            try {
                per_fold[i] = run_fold(cfg, folds[i], table);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    const std::size_t n_threads = std::min(workers, folds.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
        for (std::thread& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::vector<RunResult> all;
    for (auto& rs : per_fold) {
        for (auto& r : rs) all.push_back(std::move(r));
    }
    return all;
}

}  // namespace sraa
