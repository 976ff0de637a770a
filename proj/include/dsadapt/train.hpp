#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dsadapt/checkpoint.hpp"
#include "dsadapt/losses.hpp"
#include "dsadapt/metrics.hpp"

namespace dsadapt {

// [3,H,W] normalized image -> [H,W] class index map
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual Tensor predict(const Tensor& image) const = 0;
};

// Full dual-path inference: both backbones, DDM, both decoders, soft voting.
class EnsemblePredictor final : public Predictor {
public:
    explicit EnsemblePredictor(std::shared_ptr<const StudentEnsemble> ensemble)
        : ensemble_(std::move(ensemble)) {}
    Tensor predict(const Tensor& image) const override;

private:
    std::shared_ptr<const StudentEnsemble> ensemble_;
};

// Source backbone + source decoder only (the source_only baseline).
class SinglePathPredictor final : public Predictor {
public:
    explicit SinglePathPredictor(std::shared_ptr<const StudentEnsemble> ensemble)
        : ensemble_(std::move(ensemble)) {}
    Tensor predict(const Tensor& image) const override;

private:
    std::shared_ptr<const StudentEnsemble> ensemble_;
};

struct TrainLogRecord {
    long step = 0;
    LossBundle losses;
};
std::string log_record_to_json(const TrainLogRecord& rec);

EnsembleConfig ensemble_config_from(const TrainConfig& config, int num_classes);

class Trainer {
public:
    Trainer(TrainConfig config, Dataset source, Dataset target);
    static Trainer restore(const Checkpoint& ckpt, Dataset source, Dataset target);

    // One optimization step: teacher refresh, full forward, discriminator
    // update on detached features, student update on the combined loss.
    LossBundle train_step();

    long step() const { return step_; }
    Checkpoint make_checkpoint() const;
    std::unique_ptr<Predictor> predictor() const;

    StudentEnsemble& ensemble() { return *ensemble_; }
    const StudentEnsemble& ensemble() const { return *ensemble_; }
    TeacherState& teacher() { return teacher_; }
    const TrainConfig& config() const { return config_; }
    long all_ignored_warnings() const { return all_ignored_warnings_; }

private:
    LossBundle source_only_step(const std::vector<LabeledPatch>& batch);
    std::size_t sample_index(bool source_domain, long position) const;
    void apply_lr_schedule();

    TrainConfig config_;
    Dataset source_, target_;
    std::shared_ptr<StudentEnsemble> ensemble_;
    TeacherState teacher_;
    std::unique_ptr<Optimizer> opt_main_, opt_disc_;
    double base_lr_main_ = 0, base_lr_disc_ = 0;
    long step_ = 0;
    long all_ignored_warnings_ = 0;

    mutable long cached_epoch_[2] = {-1, -1};
    mutable std::vector<std::size_t> cached_perm_[2];
};

// Runs max_iters steps. When out_dir is nonempty, writes a config snapshot,
// an ndjson loss log, interval checkpoints and the final checkpoint there.
Checkpoint fit(const TrainConfig& config, const Dataset& source, const Dataset& target,
               const std::string& out_dir = "", std::vector<TrainLogRecord>* log_out = nullptr);

// Forward + soft voting + confusion accumulation over a labeled dataset.
EvalReport evaluate(const Predictor& predictor, const Dataset& dataset,
                    const Normalization& norm);
EvalReport evaluate(const Checkpoint& ckpt, const Dataset& dataset);

std::shared_ptr<StudentEnsemble> ensemble_from_checkpoint(const Checkpoint& ckpt);
std::unique_ptr<Predictor> make_predictor(const Checkpoint& ckpt);

}  // namespace dsadapt
