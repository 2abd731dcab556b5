#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "palm/model/policy.hpp"
#include "palm/train/checkpoint.hpp"
#include "palm/train/optimizer.hpp"

namespace palm::train {

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    int batch_size = 16;
    int epochs = 10;
    bool cosine_decay = true;
    std::uint64_t seed = 0;
    model::AblationFlags ablation;
    model::LossWeights weights;
    int steps_per_epoch = 0; // 0 = one full pass over the sample index
    int sample_stride = 1;   // subsample episode timesteps
    bool pretrain_frames = false;
    double grad_clip = 1.0;
    int checkpoint_every = 1; // epochs

    void validate() const {
        if (learning_rate <= 0) throw std::invalid_argument("train: learning rate must be > 0");
        if (batch_size <= 0) throw std::invalid_argument("train: batch size must be > 0");
        if (epochs <= 0) throw std::invalid_argument("train: epochs must be > 0");
        if (sample_stride < 1) throw std::invalid_argument("train: sample stride must be >= 1");
        weights.validate();
    }

    nlohmann::json to_json() const {
        return {{"learning_rate", learning_rate},
                {"weight_decay", weight_decay},
                {"batch_size", batch_size},
                {"epochs", epochs},
                {"cosine_decay", cosine_decay},
                {"seed", seed},
                {"steps_per_epoch", steps_per_epoch},
                {"sample_stride", sample_stride},
                {"pretrain_frames", pretrain_frames},
                {"grad_clip", grad_clip},
                {"checkpoint_every", checkpoint_every},
                {"ablation",
                 {{"no_affordance", ablation.no_affordance},
                  {"no_inverse_dynamics", ablation.no_inverse_dynamics},
                  {"no_progress", ablation.no_progress}}},
                {"weights",
                 {{"global", weights.global},
                  {"local", weights.local},
                  {"spatial", weights.spatial},
                  {"dynamic", weights.dynamic},
                  {"feature", weights.feature},
                  {"diffusion", weights.diffusion},
                  {"beta", weights.beta}}}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        auto get = [](const nlohmann::json& obj, const char* key, auto& out) {
            if (obj.contains(key)) out = obj.at(key).template get<std::decay_t<decltype(out)>>();
        };
        get(j, "learning_rate", c.learning_rate);
        get(j, "weight_decay", c.weight_decay);
        get(j, "batch_size", c.batch_size);
        get(j, "epochs", c.epochs);
        get(j, "cosine_decay", c.cosine_decay);
        get(j, "seed", c.seed);
        get(j, "steps_per_epoch", c.steps_per_epoch);
        get(j, "sample_stride", c.sample_stride);
        get(j, "pretrain_frames", c.pretrain_frames);
        get(j, "grad_clip", c.grad_clip);
        get(j, "checkpoint_every", c.checkpoint_every);
        if (j.contains("ablation")) {
            get(j.at("ablation"), "no_affordance", c.ablation.no_affordance);
            get(j.at("ablation"), "no_inverse_dynamics", c.ablation.no_inverse_dynamics);
            get(j.at("ablation"), "no_progress", c.ablation.no_progress);
        }
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            get(w, "global", c.weights.global);
            get(w, "local", c.weights.local);
            get(w, "spatial", c.weights.spatial);
            get(w, "dynamic", c.weights.dynamic);
            get(w, "feature", c.weights.feature);
            get(w, "diffusion", c.weights.diffusion);
            get(w, "beta", c.weights.beta);
        }
        return c;
    }
};

/// Optimization loop over the supervised dataset: AdamW with cosine decay,
/// per-step metrics.jsonl, per-epoch checkpointing and resumable state.
template <class S>
class Trainer {
public:
    Trainer(model::PalmModel<S>& model, TrainConfig cfg,
            const std::vector<env::EpisodeRecord>* dataset)
        : model_(&model), cfg_(std::move(cfg)), dataset_(dataset),
          opt_(model.params(), 0.9, 0.999, 1e-8, cfg_.weight_decay),
          noise_rng_(Rng::mix(cfg_.seed, 0x7A17)), shuffle_rng_(Rng::mix(cfg_.seed, 0x5F0E)) {
        cfg_.validate();
        if (!dataset_ || dataset_->empty())
            throw std::invalid_argument("empty-dataset: trainer needs at least one episode");
        build_index();
        total_steps_ = static_cast<std::int64_t>(cfg_.epochs) * steps_per_epoch();
    }

    std::int64_t steps_per_epoch() const {
        const auto full =
            static_cast<std::int64_t>((index_.size() + cfg_.batch_size - 1) / cfg_.batch_size);
        return cfg_.steps_per_epoch > 0 ? std::min<std::int64_t>(cfg_.steps_per_epoch, full)
                                        : full;
    }

    struct StepMetrics {
        std::map<std::string, double> losses; // exactly the six per-term losses
        double total = 0.0;
        double lr = 0.0;
        double grad_norm = 0.0;
    };

    /// One optimizer update on a batch of sample indices.
    StepMetrics train_step(const std::vector<std::size_t>& batch, bool frame_pretrain = false) {
        model_->params().zero_grad();
        StepMetrics sm;
        auto& agg = sm.losses;
        const double inv = 1.0 / static_cast<double>(batch.size());
        double total = 0.0;
        for (std::size_t bi : batch) {
            const auto [ei, t] = index_.at(bi);
            supervision::TrainingSample sample = supervision::build_sample(
                (*dataset_)[ei], t, model_->config().supervision, tracker_);
            ad::Graph<S> g;
            ParamUse<S> p(g, model_->params());
            auto out = model_->training_loss(p, sample, cfg_.weights, noise_rng_, frame_pretrain);
            const double loss = static_cast<double>(out.total.item());
            if (!std::isfinite(loss)) {
                std::string diag = "non-finite loss; breakdown:";
                for (const auto& [k, v] : out.breakdown)
                    diag += " " + k + "=" + std::to_string(v);
                throw std::runtime_error(diag);
            }
            total += loss * inv;
            for (const auto& [k, v] : out.breakdown) agg[k] += v * inv;
            g.backward(out.total);
            p.harvest(static_cast<S>(inv));
        }
        sm.grad_norm = model_->params().clip_grad_norm(cfg_.grad_clip);
        sm.lr = cfg_.cosine_decay ? cosine_lr(cfg_.learning_rate, global_step_, total_steps_)
                                  : cfg_.learning_rate;
        opt_.step(sm.lr);
        ++global_step_;
        sm.total = total;
        return sm;
    }

    /// Full training run; writes metrics.jsonl and epoch checkpoints under
    /// out_dir and returns the final checkpoint path. stop_after_epochs > 0
    /// ends the run early (the LR schedule still spans the configured total).
    std::string fit(const std::string& out_dir, const std::string& resume_from = "",
                    int stop_after_epochs = 0) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);

        int start_epoch = 0;
        if (!resume_from.empty()) {
            TrainState st = load_checkpoint_into(resume_from, *model_, &opt_);
            start_epoch = st.epoch;
            global_step_ = st.step;
            noise_rng_.set_state(st.rng_state);
        }

        std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl",
                              resume_from.empty() ? std::ios::trunc : std::ios::app);
        if (!metrics) throw std::runtime_error("io-failure: cannot write metrics.jsonl");

        const std::int64_t spe = steps_per_epoch();
        const int total_epochs = cfg_.epochs + (cfg_.pretrain_frames ? 1 : 0);
        const int end_epoch =
            stop_after_epochs > 0 ? std::min(total_epochs, stop_after_epochs) : total_epochs;
        for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
            const bool warmup = cfg_.pretrain_frames && epoch == 0;
            auto order = epoch_order(epoch);
            for (std::int64_t s = 0; s < spe; ++s) {
                std::vector<std::size_t> batch;
                for (int b = 0; b < cfg_.batch_size; ++b)
                    batch.push_back(order[static_cast<std::size_t>(
                        (s * cfg_.batch_size + b) % static_cast<std::int64_t>(order.size()))]);
                auto m = train_step(batch, warmup);
                nlohmann::json rec;
                rec["step"] = global_step_;
                rec["epoch"] = epoch;
                rec["lr"] = m.lr;
                rec["grad_norm"] = m.grad_norm;
                rec["total"] = m.total;
                nlohmann::json losses;
                for (const auto& [k, v] : m.losses) losses[k] = v;
                rec["losses"] = losses;
                metrics << rec.dump() << "\n";
            }
            metrics.flush();
            if ((epoch + 1) % cfg_.checkpoint_every == 0 || epoch + 1 == end_epoch) {
                TrainState st;
                st.step = global_step_;
                st.epoch = epoch + 1;
                st.rng_state = noise_rng_.state();
                char name[64];
                std::snprintf(name, sizeof(name), "epoch_%03d.palmckpt", epoch + 1);
                save_checkpoint((fs::path(out_dir) / name).string(), *model_, st, &opt_);
            }
        }
        TrainState st;
        st.step = global_step_;
        st.epoch = end_epoch;
        st.rng_state = noise_rng_.state();
        const std::string final_path = (fs::path(out_dir) / "final.palmckpt").string();
        save_checkpoint(final_path, *model_, st, &opt_);
        return final_path;
    }

    std::size_t sample_count() const { return index_.size(); }
    std::int64_t step_count() const { return global_step_; }
    const std::vector<std::pair<std::size_t, int>>& index() const { return index_; }

    std::vector<std::size_t> epoch_order(int epoch) {
        std::vector<std::size_t> order(index_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng r = shuffle_rng_.fork(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<std::size_t>(r.uniform_int(i + 1))]);
        return order;
    }

private:
    void build_index() {
        for (std::size_t e = 0; e < dataset_->size(); ++e) {
            const auto ts = supervision::valid_sample_times((*dataset_)[e],
                                                            model_->config().supervision);
            for (std::size_t k = 0; k < ts.size();
                 k += static_cast<std::size_t>(cfg_.sample_stride))
                index_.emplace_back(e, ts[k]);
        }
        if (index_.empty()) throw std::invalid_argument("empty-dataset: no valid samples");
    }

    model::PalmModel<S>* model_;
    TrainConfig cfg_;
    const std::vector<env::EpisodeRecord>* dataset_;
    AdamW<S> opt_;
    Rng noise_rng_, shuffle_rng_;
    supervision::GroundTruthTracker tracker_;
    std::vector<std::pair<std::size_t, int>> index_;
    std::int64_t global_step_ = 0;
    std::int64_t total_steps_ = 0;
};

} // namespace palm::train
