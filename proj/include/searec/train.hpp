#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "searec/config.hpp"
#include "searec/data.hpp"
#include "searec/metrics.hpp"
#include "searec/model.hpp"
#include "searec/optim.hpp"

#include <json.hpp>

namespace searec {

// deterministic in-place Fisher-Yates (std::shuffle draw order is unspecified)
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[uniform_below(rng, i)]);
}

inline std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    shuffle_indices(idx, rng);
    return idx;
}

// Flush per-thread gradient buffers into the shared parameter gradients in
// registration order, thread by thread, so the accumulation sequence does not
// depend on map iteration order or scheduling.
template <typename Real>
void flush_sinks_ordered(std::vector<GradSink<Real>>& sinks, const ParamRegistry<Real>& reg) {
    for (auto& sink : sinks) {
        for (const auto& kv : reg.params()) {
            auto it = sink.buffers.find(kv.second.get());
            if (it == sink.buffers.end()) continue;
            kv.second->ensure_grad();
            Real* g = kv.second->grad.data();
            const std::vector<Real>& buf = it->second;
            for (std::size_t i = 0; i < buf.size(); ++i) g[i] += buf[i];
        }
        sink.buffers.clear();
    }
}

template <typename Real>
std::vector<std::size_t> evaluate_ranks(Model<Real>& model, const std::vector<Example>& examples,
                                        std::size_t threads = 1) {
    std::vector<std::size_t> ranks(examples.size());
    parallel_chunks(examples.size(), resolve_threads(static_cast<int>(threads)),
                    [&](int, std::size_t b, std::size_t e) {
                        for (std::size_t i = b; i < e; ++i) {
                            auto scores = model.score_eval(examples[i]);
                            std::vector<double> s(scores.begin(), scores.end());
                            ranks[i] = rank_of(s, 0);
                        }
                    });
    return ranks;
}

template <typename Real>
MetricsReport evaluate_examples(Model<Real>& model, const std::vector<Example>& examples,
                                std::size_t threads = 1) {
    if (examples.empty()) throw DataError("evaluate: no examples");
    MetricsReport r = aggregate_ranks(evaluate_ranks(model, examples, threads));
    r.scenario = scenario_name(examples.front().scenario);
    r.variant = variant_name(model.cfg.variant);
    return r;
}

struct StageResult {
    std::vector<double> epoch_losses;  // mean joint loss per epoch
    std::size_t epochs_run = 0;
    bool early_stopped = false;
    double best_metric = -1.0;  // validation ndcg@10 when early stopping
    std::size_t best_epoch = 0;
};

template <typename Real>
class Trainer {
  public:
    Trainer(Model<Real>& model, const TrainSettings& settings, std::ostream* log = nullptr)
        : model_(model), settings_(settings), log_(log) {
        if (settings_.batch == 0) throw ConfigError("train.batch must be positive");
        if (settings_.alternation != "batch" && settings_.alternation != "epoch")
            throw ConfigError("train.alternation must be batch or epoch");
    }

    Adam<Real>& optimizer() { return opt_; }
    long long steps() const { return global_step_; }

    // fresh optimizer moments and schedule position at a stage boundary
    void reset_stage() {
        opt_ = Adam<Real>{};
        global_step_ = 0;
    }

    // Joint training over both scenarios. "batch" alternation interleaves one
    // search batch with one rec batch per optimizer step pair; "epoch" runs
    // all search batches, then all rec batches, within each epoch. An empty
    // scenario degrades to single-scenario training with a logged warning.
    StageResult run_pretrain(const std::vector<Example>& search, const std::vector<Example>& rec) {
        if (search.empty() && rec.empty()) throw DataError("pretrain: no examples");
        if (search.empty()) warn("pretrain has no search examples; training on rec only");
        if (rec.empty()) warn("pretrain has no rec examples; training on search only");
        StageResult out;
        for (std::size_t epoch = 1; epoch <= settings_.pretrain_epochs; ++epoch) {
            auto order_s = shuffled_order(
                search.size(), mix_seed({settings_.seed, hash_str("pretrain"), epoch, 0}));
            auto order_r = shuffled_order(
                rec.size(), mix_seed({settings_.seed, hash_str("pretrain"), epoch, 1}));
            std::size_t nb_s = batch_count(search.size());
            std::size_t nb_r = batch_count(rec.size());
            double loss_sum = 0;
            std::size_t n_ex = 0;
            auto run_s = [&](std::size_t b) {
                loss_sum += train_batch(search, order_s, b, "pretrain", epoch, &n_ex);
            };
            auto run_r = [&](std::size_t b) {
                loss_sum += train_batch(rec, order_r, b, "pretrain", epoch, &n_ex);
            };
            if (settings_.alternation == "batch") {
                for (std::size_t b = 0; b < std::max(nb_s, nb_r); ++b) {
                    if (b < nb_s) run_s(b);
                    if (b < nb_r) run_r(b);
                }
            } else {
                for (std::size_t b = 0; b < nb_s; ++b) run_s(b);
                for (std::size_t b = 0; b < nb_r; ++b) run_r(b);
            }
            out.epoch_losses.push_back(loss_sum / static_cast<double>(n_ex));
            out.epochs_run = epoch;
            log_epoch("pretrain", epoch, out.epoch_losses.back());
        }
        return out;
    }

    // Single-scenario training. With early stopping enabled and a validation
    // set supplied, keeps the parameters from the best validation ndcg@10 and
    // stops after `patience` epochs without improvement.
    StageResult run_finetune(const std::vector<Example>& train, const std::vector<Example>* valid,
                             std::size_t threads_for_eval = 1) {
        StageResult out;
        if (settings_.finetune_epochs == 0) return out;
        if (train.empty()) throw DataError("finetune: no examples");
        bool stopping = settings_.early_stop && valid && !valid->empty();
        std::vector<std::vector<Real>> best;
        for (std::size_t epoch = 1; epoch <= settings_.finetune_epochs; ++epoch) {
            auto order = shuffled_order(train.size(),
                                        mix_seed({settings_.seed, hash_str("finetune"), epoch, 0}));
            double loss_sum = 0;
            std::size_t n_ex = 0;
            for (std::size_t b = 0; b < batch_count(train.size()); ++b)
                loss_sum += train_batch(train, order, b, "finetune", epoch, &n_ex);
            out.epoch_losses.push_back(loss_sum / static_cast<double>(n_ex));
            out.epochs_run = epoch;
            log_epoch("finetune", epoch, out.epoch_losses.back());
            if (!stopping) continue;
            MetricsReport r = evaluate_examples(model_, *valid, threads_for_eval);
            if (log_) {
                nlohmann::json j{{"event", "valid"},
                                 {"epoch", epoch},
                                 {"ndcg10", r.ndcg10},
                                 {"hr10", r.hr10}};
                (*log_) << j.dump() << '\n';
            }
            if (r.ndcg10 > out.best_metric) {
                out.best_metric = r.ndcg10;
                out.best_epoch = epoch;
                best = snapshot_params();
            } else if (epoch - out.best_epoch >= settings_.patience) {
                out.early_stopped = true;
                break;
            }
        }
        if (stopping && !best.empty()) restore_params(best);
        return out;
    }

    std::vector<std::vector<Real>> snapshot_params() const {
        std::vector<std::vector<Real>> snap;
        snap.reserve(model_.reg.params().size());
        for (const auto& kv : model_.reg.params()) snap.push_back(kv.second->values);
        return snap;
    }

    void restore_params(const std::vector<std::vector<Real>>& snap) {
        if (snap.size() != model_.reg.params().size())
            throw DataError("parameter snapshot does not match the model");
        std::size_t i = 0;
        for (const auto& kv : model_.reg.params()) {
            if (snap[i].size() != kv.second->values.size())
                throw DataError("parameter snapshot size mismatch for " + kv.first);
            kv.second->values = snap[i++];
        }
    }

  private:
    Model<Real>& model_;
    TrainSettings settings_;
    std::ostream* log_;
    Adam<Real> opt_;
    long long global_step_ = 0;

    std::size_t batch_count(std::size_t n) const {
        return (n + settings_.batch - 1) / settings_.batch;
    }

    // one optimizer step over pool[order[b*batch .. )]
    double train_batch(const std::vector<Example>& pool, const std::vector<std::size_t>& order,
                       std::size_t batch_index, const char* stage, std::size_t epoch,
                       std::size_t* examples_seen) {
        std::size_t first = batch_index * settings_.batch;
        std::size_t count = std::min(settings_.batch, pool.size() - first);
        Real scale = static_cast<Real>(1.0 / static_cast<double>(count));
        std::uint64_t stage_tag = hash_str(stage);
        double sum = 0;
        int threads = resolve_threads(static_cast<int>(settings_.threads));
        if (threads <= 1 || count < 2) {
            for (std::size_t k = 0; k < count; ++k)
                sum += train_example(pool[order[first + k]], stage_tag, epoch, first + k, scale,
                                     nullptr, stage);
        } else {
            std::vector<GradSink<Real>> sinks(static_cast<std::size_t>(threads));
            std::vector<double> sums(static_cast<std::size_t>(threads), 0.0);
            parallel_chunks(count, threads, [&](int tid, std::size_t b, std::size_t e) {
                for (std::size_t k = b; k < e; ++k)
                    sums[static_cast<std::size_t>(tid)] +=
                        train_example(pool[order[first + k]], stage_tag, epoch, first + k, scale,
                                      &sinks[static_cast<std::size_t>(tid)], stage);
            });
            flush_sinks_ordered(sinks, model_.reg);
            for (double s : sums) sum += s;
        }
        ++global_step_;
        double lr = lr_at(global_step_, model_.cfg.d, static_cast<long long>(settings_.warmup)) *
                    settings_.lr_scale;
        opt_.step(model_.reg, lr);
        *examples_seen += count;
        if (log_) {
            nlohmann::json j{{"stage", stage},
                             {"epoch", epoch},
                             {"step", global_step_},
                             {"scenario", scenario_name(pool[order[first]].scenario)},
                             {"loss", sum / static_cast<double>(count)},
                             {"lr", lr}};
            (*log_) << j.dump() << '\n';
        }
        return sum;
    }

    double train_example(const Example& ex, std::uint64_t stage_tag, std::size_t epoch,
                         std::size_t ordinal, Real scale, GradSink<Real>* sink,
                         const char* stage) {
        Tape<Real> tape;
        tape.sink = sink;
        tape.dropout_rng.seed(mix_seed({settings_.seed, stage_tag, epoch, ordinal}));
        auto res = model_.forward(tape, ex);
        double lv = static_cast<double>(res.loss->values[0]);
        if (!std::isfinite(lv))
            throw NumericError(std::string("non-finite loss in ") + stage + " epoch " +
                               std::to_string(epoch) + " step " +
                               std::to_string(global_step_ + 1) + " (scenario " +
                               scenario_name(ex.scenario) + ", user " + std::to_string(ex.user) +
                               ")");
        tape.backward(res.loss, scale);
        return lv;
    }

    void log_epoch(const char* stage, std::size_t epoch, double mean_loss) {
        if (!log_) return;
        nlohmann::json j{{"event", "epoch"}, {"stage", stage}, {"epoch", epoch},
                         {"mean_loss", mean_loss}};
        (*log_) << j.dump() << '\n';
    }

    void warn(const std::string& msg) {
        if (!log_) return;
        nlohmann::json j{{"event", "warning"}, {"message", msg}};
        (*log_) << j.dump() << '\n';
    }
};

// train/eval example splits for one scenario
struct ExampleBundle {
    std::vector<Example> pretrain, task_train, valid, test;
};

inline ExampleBundle build_bundle(const Dataset& ds, Scenario sc, const TrainSettings& ts) {
    ExampleBuildOptions train_opt;
    train_opt.max_len = ds.manifest.max_len;
    train_opt.negatives = ts.negatives_train;
    train_opt.seed = ts.seed;
    train_opt.max_prefixes = ts.max_prefixes;
    train_opt.pretrain_ratio = ds.manifest.pretrain_ratio;
    ExampleBuildOptions eval_opt = train_opt;
    eval_opt.negatives = ts.eval_negatives;
    eval_opt.max_prefixes = 0;
    ExampleBundle b;
    b.pretrain = build_pretrain_examples(ds, sc, train_opt);
    b.task_train = build_task_examples(ds, sc, ExamplePurpose::task_train, train_opt);
    b.valid = build_task_examples(ds, sc, ExamplePurpose::valid, eval_opt);
    b.test = build_task_examples(ds, sc, ExamplePurpose::test, eval_opt);
    return b;
}

template <typename Real>
struct RunOutcome {
    MetricsReport search_test, rec_test;
    StageResult pretrain, finetune_search, finetune_rec;
};

// Full protocol: joint training on the early region of every stream, then one
// fine-tuned arm per scenario branching from the shared weights, each
// evaluated on its own held-out test interaction.
template <typename Real>
RunOutcome<Real> run_training(Model<Real>& model, const Dataset& ds, const RunConfig& cfg,
                              std::ostream* log = nullptr) {
    ExampleBundle search = build_bundle(ds, Scenario::search, cfg.train);
    ExampleBundle rec = build_bundle(ds, Scenario::rec, cfg.train);
    Trainer<Real> tr(model, cfg.train, log);
    RunOutcome<Real> out;
    if (model.cfg.variant != Variant::no_pretrain && cfg.train.pretrain_epochs > 0)
        out.pretrain = tr.run_pretrain(search.pretrain, rec.pretrain);
    auto shared = tr.snapshot_params();
    std::string hash = config_hash_hex(resolved_json(cfg));

    tr.reset_stage();
    out.finetune_search = tr.run_finetune(search.task_train, &search.valid, cfg.train.threads);
    out.search_test = evaluate_examples(model, search.test, cfg.train.threads);
    out.search_test.seed = cfg.train.seed;
    out.search_test.config_hash = hash;

    tr.restore_params(shared);
    tr.reset_stage();
    out.finetune_rec = tr.run_finetune(rec.task_train, &rec.valid, cfg.train.threads);
    out.rec_test = evaluate_examples(model, rec.test, cfg.train.threads);
    out.rec_test.seed = cfg.train.seed;
    out.rec_test.config_hash = hash;
    return out;
}

// One comparison arm: a fresh model of the given variant, trained with the
// shared protocol and evaluated on one scenario. With `single_scenario_data`
// the joint stage sees only that scenario's examples, which turns the arm
// into an end-to-end single-scenario model of the same size.
template <typename Real>
MetricsReport train_eval_arm(const Dataset& ds, RunConfig cfg, Variant variant, Scenario eval_sc,
                             std::uint64_t seed, bool single_scenario_data = false,
                             std::ostream* log = nullptr) {
    cfg.model.variant = variant;
    cfg.model.seed = seed;
    cfg.train.seed = seed;
    cfg.model.vocab = VocabSizes{ds.manifest.users, ds.manifest.products, ds.manifest.words};
    cfg.model.max_len = ds.manifest.max_len;
    Model<Real> model(cfg.model);
    ExampleBundle bundle = build_bundle(ds, eval_sc, cfg.train);
    Trainer<Real> tr(model, cfg.train, log);
    if (variant != Variant::no_pretrain && cfg.train.pretrain_epochs > 0) {
        if (single_scenario_data) {
            std::vector<Example> empty;
            if (eval_sc == Scenario::search)
                tr.run_pretrain(bundle.pretrain, empty);
            else
                tr.run_pretrain(empty, bundle.pretrain);
        } else {
            Scenario other = eval_sc == Scenario::search ? Scenario::rec : Scenario::search;
            ExampleBundle other_bundle = build_bundle(ds, other, cfg.train);
            if (eval_sc == Scenario::search)
                tr.run_pretrain(bundle.pretrain, other_bundle.pretrain);
            else
                tr.run_pretrain(other_bundle.pretrain, bundle.pretrain);
        }
    }
    tr.reset_stage();
    tr.run_finetune(bundle.task_train, &bundle.valid, cfg.train.threads);
    MetricsReport r = evaluate_examples(model, bundle.test, cfg.train.threads);
    r.seed = seed;
    r.config_hash = config_hash_hex(resolved_json(cfg));
    return r;
}

}  // namespace searec
