#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "searec/checkpoint.hpp"
#include "searec/gradcheck.hpp"
#include "searec/synthetic.hpp"
#include "searec/tfidf.hpp"
#include "searec/train.hpp"

namespace fs = std::filesystem;
using namespace searec;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

void write_snapshot(const fs::path& dir, const json& resolved) {
    write_text(dir / "config.resolved.json", resolved.dump(2) + "\n");
}

fs::path ensure_dir(const std::string& dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

RunConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return load_run_config(path);
}

// dataset manifests own the windowing bound, so the model must cover it
void bind_to_dataset(RunConfig& cfg, const DatasetManifest& m) {
    cfg.model.vocab = VocabSizes{m.users, m.products, m.words};
    cfg.model.max_len = m.max_len;
}

void apply_seed(RunConfig& cfg, std::uint64_t seed, bool seed_set) {
    if (!seed_set) return;
    cfg.model.seed = seed;
    cfg.train.seed = seed;
}

void print_reports(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) return;
    std::string first = reports.front().table();
    std::size_t nl = first.find('\n');
    std::cout << first.substr(0, nl + 1);
    for (const auto& r : reports) {
        std::string t = r.table();
        std::cout << t.substr(t.find('\n') + 1) << "\n";
    }
}

struct CommonPaths {
    std::string config, records, manifest, out_dir = ".";
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonPaths& p, bool needs_data) {
    cmd->add_option("--config", p.config, "run configuration JSON");
    auto* rec = cmd->add_option("--records", p.records, "interaction records (JSONL)");
    auto* man = cmd->add_option("--manifest", p.manifest, "dataset manifest (JSON)");
    if (needs_data) {
        rec->required();
        man->required();
    }
    cmd->add_option("--out-dir", p.out_dir, "output directory (created if missing)");
    cmd->add_option("--seed", p.seed, "override the model and training seeds")
        ->each([&p](const std::string&) { p.seed_set = true; });
}

template <typename Real>
int cmd_pretrain(RunConfig cfg, const Dataset& ds, const fs::path& out) {
    Model<Real> model(cfg.model);
    std::ofstream log(out / "pretrain.log.jsonl");
    ExampleBundle s = build_bundle(ds, Scenario::search, cfg.train);
    ExampleBundle r = build_bundle(ds, Scenario::rec, cfg.train);
    Trainer<Real> tr(model, cfg.train, &log);
    StageResult st;
    if (cfg.model.variant != Variant::no_pretrain && cfg.train.pretrain_epochs > 0)
        st = tr.run_pretrain(s.pretrain, r.pretrain);
    json meta{{"stage", "pretrain"},
              {"epochs", st.epochs_run},
              {"config_hash", config_hash_hex(resolved_json(cfg))},
              {"seed", cfg.train.seed}};
    save_checkpoint((out / "pretrained.ckpt").string(), model, &tr.optimizer(), meta);
    std::cout << "pretrained " << st.epochs_run << " epochs over " << s.pretrain.size()
              << " search and " << r.pretrain.size() << " rec examples\n";
    if (!st.epoch_losses.empty())
        std::cout << "mean loss " << st.epoch_losses.front() << " -> " << st.epoch_losses.back()
                  << "\n";
    std::cout << "wrote " << (out / "pretrained.ckpt").string() << "\n";
    return 0;
}

template <typename Real>
int cmd_finetune(RunConfig cfg, const Dataset& ds, const std::string& ckpt, Scenario sc,
                 const fs::path& out) {
    Model<Real> model(cfg.model);
    if (!ckpt.empty()) {
        json meta = load_checkpoint(ckpt, model, static_cast<Adam<Real>*>(nullptr));
        std::cout << "loaded checkpoint " << ckpt << " (" << meta.dump() << ")\n";
    }
    std::string name = scenario_name(sc);
    std::ofstream log(out / ("finetune." + name + ".log.jsonl"));
    ExampleBundle b = build_bundle(ds, sc, cfg.train);
    Trainer<Real> tr(model, cfg.train, &log);
    StageResult st = tr.run_finetune(b.task_train, &b.valid, cfg.train.threads);
    json meta{{"stage", "finetune"},
              {"scenario", name},
              {"epochs", st.epochs_run},
              {"config_hash", config_hash_hex(resolved_json(cfg))},
              {"seed", cfg.train.seed}};
    save_checkpoint((out / ("finetuned." + name + ".ckpt")).string(), model, nullptr, meta);
    MetricsReport rep = evaluate_examples(model, b.valid, cfg.train.threads);
    rep.seed = cfg.train.seed;
    rep.config_hash = config_hash_hex(resolved_json(cfg));
    write_text(out / ("metrics." + name + ".valid.json"), rep.to_json().dump(2) + "\n");
    std::cout << "finetuned " << st.epochs_run << " epochs on " << b.task_train.size()
              << " examples";
    if (st.early_stopped) std::cout << " (stopped early, best epoch " << st.best_epoch << ")";
    std::cout << "\n" << rep.table() << "\n";
    return 0;
}

template <typename Real>
int cmd_evaluate(RunConfig cfg, const Dataset& ds, const std::string& ckpt,
                 const std::vector<Scenario>& scenarios, ExamplePurpose split,
                 const fs::path& out) {
    Model<Real> model(cfg.model);
    json meta = load_checkpoint(ckpt, model, static_cast<Adam<Real>*>(nullptr));
    std::cout << "loaded checkpoint " << ckpt << " (" << meta.dump() << ")\n";
    std::vector<MetricsReport> reports;
    for (Scenario sc : scenarios) {
        ExampleBundle b = build_bundle(ds, sc, cfg.train);
        const auto& pool = split == ExamplePurpose::valid ? b.valid : b.test;
        MetricsReport rep = evaluate_examples(model, pool, cfg.train.threads);
        rep.seed = cfg.train.seed;
        rep.config_hash = config_hash_hex(resolved_json(cfg));
        std::string fname =
            std::string("metrics.") + scenario_name(sc) + "." + purpose_name(split) + ".json";
        write_text(out / fname, rep.to_json().dump(2) + "\n");
        reports.push_back(rep);
    }
    print_reports(reports);
    return 0;
}

template <typename Real>
int cmd_run(RunConfig cfg, const Dataset& ds, const fs::path& out) {
    Model<Real> model(cfg.model);
    std::ofstream log(out / "run.log.jsonl");
    RunOutcome<Real> o = run_training(model, ds, cfg, &log);
    write_text(out / "metrics.search.test.json", o.search_test.to_json().dump(2) + "\n");
    write_text(out / "metrics.rec.test.json", o.rec_test.to_json().dump(2) + "\n");
    save_checkpoint((out / "final.ckpt").string(), model, nullptr,
                    json{{"stage", "run"}, {"seed", cfg.train.seed}});
    print_reports({o.search_test, o.rec_test});
    return 0;
}

template <typename Real>
int cmd_ablate(RunConfig cfg, const Dataset& ds, const std::vector<std::string>& variants,
               const std::vector<std::uint64_t>& seeds, Scenario sc, bool include_solo,
               const fs::path& out) {
    std::ofstream jsonl(out / "ablation.jsonl");
    std::vector<MetricsReport> reports;
    for (std::uint64_t seed : seeds) {
        for (const std::string& v : variants) {
            MetricsReport rep = train_eval_arm<Real>(ds, cfg, variant_from(v), sc, seed);
            jsonl << rep.to_json().dump() << "\n";
            jsonl.flush();
            reports.push_back(rep);
        }
        if (include_solo) {
            MetricsReport rep = train_eval_arm<Real>(ds, cfg, Variant::full, sc, seed, true);
            rep.variant = "single_scenario";
            jsonl << rep.to_json().dump() << "\n";
            jsonl.flush();
            reports.push_back(rep);
        }
    }
    print_reports(reports);
    std::cout << "wrote " << (out / "ablation.jsonl").string() << "\n";
    return 0;
}

Example random_gradcheck_example(std::mt19937_64& rng, Scenario sc, const VocabSizes& vocab,
                                 std::size_t len) {
    Example ex;
    ex.scenario = sc;
    ex.user = static_cast<std::int32_t>(uniform_int(rng, 1, std::int64_t(vocab.users)));
    ex.valid_len = len;
    for (std::size_t t = 0; t < len; ++t)
        ex.products.push_back(
            static_cast<std::int32_t>(uniform_int(rng, 1, std::int64_t(vocab.products))));
    if (sc == Scenario::search)
        for (std::size_t t = 0; t <= len; ++t) {
            std::vector<std::int32_t> q;
            std::size_t nw = 1 + uniform_below(rng, 2);
            for (std::size_t i = 0; i < nw; ++i)
                q.push_back(
                    static_cast<std::int32_t>(uniform_int(rng, 1, std::int64_t(vocab.words))));
            ex.queries.push_back(q);
        }
    ex.target = static_cast<std::int32_t>(uniform_int(rng, 1, std::int64_t(vocab.products)));
    std::unordered_set<std::int32_t> none;
    ex.negatives = sample_negatives(none, ex.target, 2, vocab.products, rng(), ex.user,
                                    ExamplePurpose::pretrain, 0);
    return ex;
}

int cmd_gradcheck(RunConfig cfg, std::size_t len, double h, double tol, std::uint64_t seed) {
    // finite differences need double precision and a dropout-free forward pass
    cfg.model.dropout = 0.0;
    if (cfg.model.vocab.users == 0)
        cfg.model.vocab = VocabSizes{3, 14, 9};
    cfg.model.max_len = std::max(cfg.model.max_len, len + 1);
    Model<double> model(cfg.model);
    std::mt19937_64 rng(seed);
    Example search_ex = random_gradcheck_example(rng, Scenario::search, cfg.model.vocab, len);
    Example rec_ex = random_gradcheck_example(rng, Scenario::rec, cfg.model.vocab, len);
    // move the session parameters off their symmetric start so the check
    // probes a generic point
    for (auto& x : model.reg.get("session.w")->values)
        x = uniform_real(rng, -0.2, 0.2);

    auto loss_fn = [&](Tape<double>& tape) {
        auto a = model.forward(tape, search_ex);
        auto b = model.forward(tape, rec_ex);
        return tape.add(a.loss, b.loss);
    };
    GradCheckReport rep = grad_check<double>(loss_fn, model.reg, h, tol);
    std::cout << "checked " << rep.checked << " parameter components\n";
    std::cout << "max relative error " << rep.max_rel_err << " (tolerance " << tol << ") at "
              << rep.worst.param << "[" << rep.worst.index << "]\n";
    for (std::size_t i = 0; i < rep.failures.size() && i < 8; ++i) {
        const auto& f = rep.failures[i];
        std::cout << "  " << f.param << "[" << f.index << "] analytic " << f.analytic
                  << " numeric " << f.numeric << "\n";
    }
    std::cout << (rep.pass ? "PASS" : "FAIL") << "\n";
    return rep.pass ? 0 : 1;
}

template <typename F>
int with_precision(const std::string& precision, F&& f) {
    if (precision == "f64") return f.template operator()<double>();
    return f.template operator()<float>();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-branch sequential search and recommendation models"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_config, gd_out = ".";
    std::uint64_t gd_seed = 0;
    bool gd_seed_set = false;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic interaction log");
    gen->add_option("--config", gd_config, "synthetic generator configuration JSON");
    gen->add_option("--out-dir", gd_out, "output directory");
    gen->add_option("--seed", gd_seed, "override the generator seed")
        ->each([&gd_seed_set](const std::string&) { gd_seed_set = true; });

    // preprocess
    std::string pp_records, pp_manifest, pp_reviews, pp_out = ".";
    std::size_t pp_min = 10, pp_keywords = 3;
    auto* pre = app.add_subcommand("preprocess",
                                   "filter, sort and reindex a dataset (or ingest raw reviews)");
    pre->add_option("--records", pp_records, "interaction records (JSONL)");
    pre->add_option("--manifest", pp_manifest, "dataset manifest (JSON)");
    pre->add_option("--reviews", pp_reviews, "raw review log (JSONL) instead of records");
    pre->add_option("--min-interactions", pp_min, "drop users and products below this floor");
    pre->add_option("--keywords", pp_keywords, "review keywords per query during ingestion");
    pre->add_option("--out-dir", pp_out, "output directory");

    CommonPaths pt, ft, ev, rn, ab;
    auto* pretrain = app.add_subcommand("pretrain", "joint training over both scenarios");
    add_common(pretrain, pt, true);

    std::string ft_ckpt, ft_scenario;
    auto* finetune = app.add_subcommand("finetune", "single-scenario training");
    add_common(finetune, ft, true);
    finetune->add_option("--checkpoint", ft_ckpt, "starting checkpoint (omit to train fresh)");
    finetune->add_option("--scenario", ft_scenario, "search or rec")->required();

    std::string ev_ckpt, ev_scenario = "both", ev_split = "test";
    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on held-out targets");
    add_common(evaluate, ev, true);
    evaluate->add_option("--checkpoint", ev_ckpt, "checkpoint to score")->required();
    evaluate->add_option("--scenario", ev_scenario, "search, rec or both");
    evaluate->add_option("--split", ev_split, "valid or test");

    auto* run = app.add_subcommand("run", "full protocol: joint stage, both arms, test metrics");
    add_common(run, rn, true);

    std::string ab_variants = "full", ab_scenario = "search";
    std::string ab_seeds = "1";
    bool ab_solo = false;
    auto* ablate = app.add_subcommand("ablate", "retrain comparison arms and tabulate metrics");
    add_common(ablate, ab, true);
    ablate->add_option("--variants", ab_variants, "comma-separated variant names");
    ablate->add_option("--seeds", ab_seeds, "comma-separated seeds");
    ablate->add_option("--scenario", ab_scenario, "search or rec");
    ablate->add_flag("--include-solo", ab_solo, "add a single-scenario end-to-end arm");

    std::string gc_config;
    std::size_t gc_len = 6;
    double gc_h = 1e-5, gc_tol = 1e-4;
    std::uint64_t gc_seed = 7;
    auto* gradcheck = app.add_subcommand(
        "gradcheck", "finite-difference check of the joint loss gradients (f64)");
    gradcheck->add_option("--config", gc_config, "run configuration JSON");
    gradcheck->add_option("--len", gc_len, "history length of the probe examples");
    gradcheck->add_option("--step", gc_h, "finite-difference step");
    gradcheck->add_option("--tol", gc_tol, "relative error tolerance");
    gradcheck->add_option("--seed", gc_seed, "probe seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            SyntheticConfig scfg =
                gd_config.empty() ? SyntheticConfig{} : SyntheticConfig::from_file(gd_config);
            if (gd_seed_set) scfg.seed = gd_seed;
            fs::path out = ensure_dir(gd_out);
            SyntheticOutput so = generate_synthetic(scfg);
            save_dataset(so.dataset, (out / "records.jsonl").string(),
                         (out / "manifest.json").string());
            save_boundaries(so.boundaries, (out / "boundaries.jsonl").string());
            write_text(out / "generator.resolved.json", scfg.to_json().dump(2) + "\n");
            std::cout << "wrote " << so.dataset.users.size() << " users ("
                      << so.dataset.manifest.rec_count << " rec, "
                      << so.dataset.manifest.search_count << " search events) to " << out.string()
                      << "\n";
            return 0;
        }
        if (pre->parsed()) {
            if (pp_reviews.empty() == pp_records.empty())
                throw ConfigError("preprocess needs either --records with --manifest, or --reviews");
            fs::path out = ensure_dir(pp_out);
            Dataset raw;
            if (!pp_reviews.empty()) {
                raw = ingest_reviews(load_reviews(pp_reviews), pp_keywords).dataset;
            } else {
                if (pp_manifest.empty())
                    throw ConfigError("preprocess needs --manifest next to --records");
                raw = load_dataset(pp_records, pp_manifest);
            }
            Dataset ds = preprocess(raw, pp_min);
            save_dataset(ds, (out / "records.jsonl").string(), (out / "manifest.json").string());
            std::cout << "kept " << ds.manifest.users << " users, " << ds.manifest.products
                      << " products, " << ds.manifest.words << " words\n";
            return 0;
        }

        auto prepared = [&](CommonPaths& p, RunConfig& cfg, Dataset& ds) {
            cfg = load_config_or_default(p.config);
            apply_seed(cfg, p.seed, p.seed_set);
            ds = load_dataset(p.records, p.manifest);
            bind_to_dataset(cfg, ds.manifest);
            fs::path out = ensure_dir(p.out_dir);
            write_snapshot(out, resolved_json(cfg));
            return out;
        };

        if (pretrain->parsed()) {
            RunConfig cfg;
            Dataset ds;
            fs::path out = prepared(pt, cfg, ds);
            return with_precision(cfg.train.precision, [&]<typename Real>() {
                return cmd_pretrain<Real>(cfg, ds, out);
            });
        }
        if (finetune->parsed()) {
            RunConfig cfg;
            Dataset ds;
            fs::path out = prepared(ft, cfg, ds);
            Scenario sc = scenario_from(ft_scenario);
            return with_precision(cfg.train.precision, [&]<typename Real>() {
                return cmd_finetune<Real>(cfg, ds, ft_ckpt, sc, out);
            });
        }
        if (evaluate->parsed()) {
            RunConfig cfg;
            Dataset ds;
            fs::path out = prepared(ev, cfg, ds);
            std::vector<Scenario> scenarios;
            if (ev_scenario == "both")
                scenarios = {Scenario::search, Scenario::rec};
            else
                scenarios = {scenario_from(ev_scenario)};
            ExamplePurpose split;
            if (ev_split == "valid")
                split = ExamplePurpose::valid;
            else if (ev_split == "test")
                split = ExamplePurpose::test;
            else
                throw ConfigError("--split must be valid or test, got " + ev_split);
            return with_precision(cfg.train.precision, [&]<typename Real>() {
                return cmd_evaluate<Real>(cfg, ds, ev_ckpt, scenarios, split, out);
            });
        }
        if (run->parsed()) {
            RunConfig cfg;
            Dataset ds;
            fs::path out = prepared(rn, cfg, ds);
            return with_precision(cfg.train.precision, [&]<typename Real>() {
                return cmd_run<Real>(cfg, ds, out);
            });
        }
        if (ablate->parsed()) {
            RunConfig cfg;
            Dataset ds;
            fs::path out = prepared(ab, cfg, ds);
            std::vector<std::string> variants;
            for (auto part : CLI::detail::split(ab_variants, ','))
                if (!part.empty()) variants.push_back(part);
            std::vector<std::uint64_t> seeds;
            for (auto part : CLI::detail::split(ab_seeds, ','))
                if (!part.empty()) seeds.push_back(std::stoull(part));
            if (variants.empty() || seeds.empty())
                throw ConfigError("ablate needs at least one variant and one seed");
            Scenario sc = scenario_from(ab_scenario);
            return with_precision(cfg.train.precision, [&]<typename Real>() {
                return cmd_ablate<Real>(cfg, ds, variants, seeds, sc, ab_solo, out);
            });
        }
        if (gradcheck->parsed()) {
            RunConfig cfg = load_config_or_default(gc_config);
            return cmd_gradcheck(cfg, gc_len, gc_h, gc_tol, gc_seed);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
