#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sraa/checks.hpp"
#include "sraa/config.hpp"
#include "sraa/experiment.hpp"

namespace {

using namespace sraa;

struct CommonFlags {
    std::string config_path;
    std::optional<std::string> protocol;
    std::optional<std::size_t> shots;
    std::optional<std::string> fold;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> baseline;
};

void add_common(CLI::App* cmd, CommonFlags& c) {
    cmd->add_option("--config", c.config_path, "JSON config file (defaults apply if omitted)");
    cmd->add_option("--protocol", c.protocol, "single | multi")
        ->check(CLI::IsMember({"single", "multi"}));
    cmd->add_option("--shots", c.shots, "images per novel class: 1, 2, or 5");
    cmd->add_option("--fold", c.fold, "fold id 0-8, or 'all'");
    cmd->add_option("--seed", c.seed, "master seed override");
    cmd->add_option("--baseline", c.baseline, "'ft' also runs the finetuning baseline")
        ->check(CLI::IsMember({"ft"}));
}

RunConfig effective_config(const CommonFlags& c) {
    RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
    if (c.protocol) cfg.options.protocol = parse_protocol(*c.protocol);
    if (c.shots) cfg.options.shots = *c.shots;
    if (c.fold) {
        if (*c.fold == "all") {
            cfg.options.fold.reset();
        } else {
            try {
                cfg.options.fold = std::stoul(*c.fold);
            } catch (const std::exception&) {
                throw ConfigError("--fold must be a number or 'all'");
            }
        }
    }
    if (c.seed) cfg.train.seed = *c.seed;
    if (c.baseline) cfg.options.with_finetune_baseline = true;
    cfg.validate();
    return cfg;
}

int cmd_gen_data(const CommonFlags& c, const std::string& out_override) {
    RunConfig cfg = effective_config(c);
    if (!out_override.empty()) cfg.data_dir = out_override;
    generate_data(cfg);
    std::size_t n_files = 1;  // the semantic table
    for (std::size_t fold : folds_of(cfg)) {
        n_files += 5;  // base, two few-shot groups, eval, plan record
        std::cout << "wrote " << fold_data_dir(cfg, fold).string() << "/\n";
    }
    std::cout << "generated " << n_files << " files under " << cfg.data_dir.string()
              << "\n";
    return 0;
}

int cmd_run(const CommonFlags& c, std::size_t workers) {
    const RunConfig cfg = effective_config(c);
    const std::vector<RunResult> results = run_all_folds(cfg, workers);
    for (const RunResult& r : results) {
        std::printf("%-32s base %.4f  novel %.4f  hm %.4f\n",
                    std::filesystem::relative(r.dir, cfg.out_dir).string().c_str(),
                    r.summary.miou_base, r.summary.miou_novel, r.summary.hm);
    }
    std::cout << results.size() << " run(s) complete under " << cfg.out_dir.string()
              << "\n";
    return 0;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, bool list_only,
               bool flip_grad_sign) {
    std::vector<std::string> suites;
    if (suite == "all") {
        suites = checks::suite_names();
    } else {
        suites = {suite};
    }
    if (list_only) {
        for (const std::string& s : suites) {
            for (const std::string& name : checks::check_names(s)) {
                std::cout << name << "\n";
            }
        }
        return 0;
    }
    checks::Options opts;
    opts.seed = seed;
    opts.flip_grad_sign = flip_grad_sign;
    std::size_t passed = 0, total = 0;
    for (const std::string& s : suites) {
        for (const checks::CheckResult& r : checks::run_suite(s, opts)) {
            std::cout << (r.ok ? "[ok]   " : "[FAIL] ") << r.name << ": " << r.detail
                      << "\n";
            ++total;
            passed += r.ok;
        }
    }
    std::cout << "verify: " << passed << "/" << total << " checks passed\n";
    return passed == total ? 0 : 1;
}

struct ReportRow {
    SummaryRow summary;
    std::string arm;
    std::string run;  // directory relative to the output root
};

int cmd_report(const CommonFlags& c) {
    const RunConfig cfg = effective_config(c);
    if (!std::filesystem::is_directory(cfg.out_dir)) {
        throw IoError("report: no output directory " + cfg.out_dir.string());
    }
    std::vector<ReportRow> rows;
    for (const auto& entry :
         std::filesystem::recursive_directory_iterator(cfg.out_dir)) {
        if (!entry.is_regular_file() || entry.path().filename() != "summary.csv") {
            continue;
        }
        std::ifstream is(entry.path());
        std::string line;
        std::getline(is, line);  // header
        while (std::getline(is, line)) {
            SummaryRow row;
            char protocol[32] = {0};
            if (std::sscanf(line.c_str(), "%zu,%zu,%31[^,],%lf,%lf,%lf", &row.fold,
                            &row.shots, protocol, &row.miou_base, &row.miou_novel,
                            &row.hm) != 6) {
                throw FormatError("report: bad summary row in " +
                                  entry.path().string());
            }
            row.protocol = protocol;
            const std::string dir =
                std::filesystem::relative(entry.path().parent_path(), cfg.out_dir)
                    .string();
            const bool ft = dir.size() >= 3 && dir.substr(dir.size() - 3) == "_ft";
            rows.push_back({std::move(row), ft ? "ft" : "sraa", dir});
        }
    }
    if (rows.empty()) throw IoError("report: no summary.csv files under " +
                                    cfg.out_dir.string());
    std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        return std::tie(a.summary.protocol, a.summary.shots, a.arm, a.summary.fold) <
               std::tie(b.summary.protocol, b.summary.shots, b.arm, b.summary.fold);
    });

    std::printf("%-28s %-5s %-6s %-9s %-5s %8s %8s %8s\n", "run", "fold", "shots",
                "protocol", "arm", "base", "novel", "hm");
    std::map<std::string, std::pair<SummaryRow, std::size_t>> groups;
    for (const ReportRow& r : rows) {
        std::printf("%-28s %-5zu %-6zu %-9s %-5s %8.4f %8.4f %8.4f\n", r.run.c_str(),
                    r.summary.fold, r.summary.shots, r.summary.protocol.c_str(),
                    r.arm.c_str(), r.summary.miou_base, r.summary.miou_novel,
                    r.summary.hm);
        const std::string key = r.summary.protocol + " k=" +
                                std::to_string(r.summary.shots) + " " + r.arm;
        auto& [acc, count] = groups[key];
        acc.miou_base += r.summary.miou_base;
        acc.miou_novel += r.summary.miou_novel;
        acc.hm += r.summary.hm;
        ++count;
    }
    for (const auto& [key, entry] : groups) {
        const auto& [acc, count] = entry;
        std::printf("mean %-24s %29s %8.4f %8.4f %8.4f\n", key.c_str(), "",
                    acc.miou_base / count, acc.miou_novel / count, acc.hm / count);
    }

    std::vector<SummaryRow> canonical;
    for (const ReportRow& r : rows) {
        if (r.arm == "sraa") canonical.push_back(r.summary);
    }
    const std::filesystem::path out = cfg.out_dir / "report.csv";
    write_summary_csv(out.string(), canonical);
    std::cout << "aggregate written to " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Incremental few-shot segmentation workbench"};
    app.require_subcommand(1);

    CommonFlags common;
    std::string out_override;
    std::size_t workers = 1;
    std::string suite = "all";
    bool list_only = false;
    bool flip_grad_sign = false;
    std::uint64_t verify_seed = 1;

    CLI::App* gen = app.add_subcommand("gen-data",
                                       "Generate episode files and the semantic table");
    add_common(gen, common);
    gen->add_option("--out", out_override, "output directory (overrides config)");

    CLI::App* run = app.add_subcommand("run", "Train every step and write reports");
    add_common(run, common);
    run->add_option("--workers", workers, "parallel folds (default 1)");

    CLI::App* verify = app.add_subcommand("verify", "Run verification suites");
    verify->add_option("suite", suite, "grad | oracle | determinism | all")
        ->check(CLI::IsMember({"grad", "oracle", "determinism", "all"}));
    verify->add_option("--seed", verify_seed, "seed for randomized checks");
    verify->add_flag("--list", list_only, "list check names without running");
    verify->add_flag("--flip-grad-sign", flip_grad_sign)->group("");

    CLI::App* report = app.add_subcommand("report", "Aggregate run summaries");
    add_common(report, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common, out_override);
        if (run->parsed()) return cmd_run(common, workers);
        if (verify->parsed()) {
            return cmd_verify(suite, verify_seed, list_only, flip_grad_sign);
        }
        return cmd_report(common);
    } catch (const TrainingError& e) {
        std::cerr << "training failure: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "missing input: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
