#include "dsadapt/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace fs = std::filesystem;

namespace dsadapt {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Var batch_mean(const std::vector<Var>& terms) {
    Var sum = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) sum = add(sum, terms[i]);
    return scale(sum, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Tensor EnsemblePredictor::predict(const Tensor& image) const {
    NoGradGuard ng;
    int h = image.dim(1), w = image.dim(2);
    Var x = constant(image);
    Var f_s = ensemble_->backbone_s->forward(x);
    Var f_t = ensemble_->backbone_t->forward(x);
    auto [fp_s, fp_t] = ddm_forward(f_s, f_t, ensemble_->ddm);
    Var la = ensemble_->decoder_s->forward(fp_s, h, w);
    Var lb = ensemble_->decoder_t->forward(fp_t, h, w);
    return ensemble_predict(la->value, lb->value);
}

Tensor SinglePathPredictor::predict(const Tensor& image) const {
    NoGradGuard ng;
    int h = image.dim(1), w = image.dim(2);
    Var x = constant(image);
    Var logits = ensemble_->decoder_s->forward(ensemble_->backbone_s->forward(x), h, w);
    return argmax_channels(logits->value);
}

std::string log_record_to_json(const TrainLogRecord& rec) {
    nlohmann::ordered_json j;
    j["step"] = rec.step;
    j["seg_S"] = rec.losses.seg_s;
    j["seg_T"] = rec.losses.seg_t;
    j["st_S"] = rec.losses.st_s;
    j["st_T"] = rec.losses.st_t;
    j["adv_S"] = rec.losses.adv_s;
    j["adv_T"] = rec.losses.adv_t;
    j["disc_S"] = rec.losses.disc_s;
    j["disc_T"] = rec.losses.disc_t;
    j["combined"] = rec.losses.combined;
    return j.dump();
}

EnsembleConfig ensemble_config_from(const TrainConfig& config, int num_classes) {
    EnsembleConfig ec;
    ec.backbone_kind = config.backbone_kind;
    ec.decoder_kind = config.decoder_kind;
    ec.feature_channels = config.feature_channels;
    ec.backbone_width = config.backbone_width;
    ec.downsample = config.downsample;
    ec.ddm_reduction = config.ddm_reduction;
    ec.num_classes = num_classes;
    return ec;
}

Trainer::Trainer(TrainConfig config, Dataset source, Dataset target)
    : config_(std::move(config)), source_(std::move(source)), target_(std::move(target)) {
    config_.validate();
    if (source_.size() == 0) throw DataError("source dataset is empty");
    if (target_.size() == 0) throw DataError("target dataset is empty");
    if (source_.manifest.patch_size != config_.patch_size)
        throw DataError("source patch size " + std::to_string(source_.manifest.patch_size) +
                        " != configured " + std::to_string(config_.patch_size));
    if (target_.manifest.patch_size != config_.patch_size)
        throw DataError("target patch size mismatch");
    for (const auto& rec : source_.manifest.patches)
        if (!rec.has_label) throw DataError("source patch '" + rec.id + "' lacks a label");

    int num_classes = source_.manifest.num_classes();
    if (num_classes < 2) throw DataError("source manifest declares fewer than 2 classes");

    Rng rng(config_.seed);
    ensemble_ = std::make_shared<StudentEnsemble>(ensemble_config_from(config_, num_classes), rng);
    teacher_ = make_teacher(parse_paradigm(config_.paradigm), *ensemble_, config_.alpha,
                            config_.soft_vote == "probs");
    opt_main_ = make_optimizer(config_.optimizer_main.kind, config_.optimizer_main.lr,
                               config_.optimizer_main.momentum,
                               config_.optimizer_main.weight_decay);
    opt_disc_ = make_optimizer(config_.optimizer_disc.kind, config_.optimizer_disc.lr,
                               config_.optimizer_disc.momentum,
                               config_.optimizer_disc.weight_decay);
    base_lr_main_ = config_.optimizer_main.lr;
    base_lr_disc_ = config_.optimizer_disc.lr;
}

std::size_t Trainer::sample_index(bool source_domain, long position) const {
    const Dataset& ds = source_domain ? source_ : target_;
    long n = static_cast<long>(ds.size());
    long epoch = position / n, offset = position % n;
    int slot = source_domain ? 0 : 1;
    if (cached_epoch_[slot] != epoch) {
        std::vector<std::size_t>& perm = cached_perm_[slot];
        perm.resize(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 rng(mix64(config_.seed ^ (source_domain ? 0x5u : 0xAu) ^
                                  (static_cast<std::uint64_t>(epoch) << 8)));
        std::shuffle(perm.begin(), perm.end(), rng);
        cached_epoch_[slot] = epoch;
    }
    return cached_perm_[slot][static_cast<std::size_t>(offset)];
}

void Trainer::apply_lr_schedule() {
    if (config_.lr_schedule != "poly" || config_.max_iters <= 0) return;
    double frac = 1.0 - static_cast<double>(step_) / static_cast<double>(config_.max_iters);
    double factor = std::pow(std::max(frac, 0.0), config_.lr_poly_power);
    opt_main_->set_lr(base_lr_main_ * factor);
    opt_disc_->set_lr(base_lr_disc_ * factor);
}

LossBundle Trainer::source_only_step(const std::vector<LabeledPatch>& batch) {
    int p = config_.patch_size;
    std::vector<Var> seg_terms;
    for (const auto& item : batch) {
        Var x = constant(item.image);
        Var logits =
            ensemble_->decoder_s->forward(ensemble_->backbone_s->forward(x), p, p);
        seg_terms.push_back(seg_loss(logits, item.label, kIgnoreIndex, &all_ignored_warnings_));
    }
    Var total = batch_mean(seg_terms);

    LossBundle parts;
    parts.seg_s = total->value[0];
    LossBundle bundle = combine(parts, config_.lambda, config_.beta);

    std::vector<Var> params;
    ensemble_->backbone_s->collect(params);
    ensemble_->decoder_s->collect(params);
    apply_lr_schedule();
    zero_grads(params);
    backward(total);
    opt_main_->step(params);
    ++step_;
    return bundle;
}

LossBundle Trainer::train_step() {
    const int b = config_.batch_size;
    const int p = config_.patch_size;
    const long base_pos = step_ * static_cast<long>(b);

    std::vector<LabeledPatch> batch_s;
    std::vector<UnlabeledPatch> batch_t;
    for (int k = 0; k < b; ++k) {
        batch_s.push_back(
            source_.load_labeled(sample_index(true, base_pos + k), config_.normalization));
        batch_t.push_back(
            target_.load_unlabeled(sample_index(false, base_pos + k), config_.normalization));
    }

    if (config_.variant == "source_only") return source_only_step(batch_s);

    const bool use_teacher = config_.lambda > 0.0;
    const bool st_active = use_teacher && step_ >= config_.st_burn_in;
    const bool adversarial = config_.beta > 0.0;

    // 1) teacher EMA refresh, ahead of pseudo-label generation
    if (use_teacher && step_ % config_.ema_interval == 0)
        ema_update(teacher_, *ensemble_, config_.alpha);

    // 2) full forward on both domains
    std::vector<Var> x_t_vars(b);
    std::vector<FullForward> fwd(b);
    for (int k = 0; k < b; ++k) {
        Var x_s = constant(batch_s[k].image);
        x_t_vars[k] = constant(batch_t[k].image);
        fwd[k] = forward_full(*ensemble_, x_s, x_t_vars[k]);
    }

    // pseudo-labels from the just-updated teacher, gradient-free
    std::vector<PseudoLabel> pseudo(b);
    if (st_active) {
        for (int k = 0; k < b; ++k) {
            if (teacher_.paradigm == Paradigm::decoder_only)
                pseudo[k] =
                    pseudo_label_decoder_only(teacher_, fwd[k].fp_st, fwd[k].fp_tt, p, p);
            else
                pseudo[k] = pseudo_label_single_target(teacher_, x_t_vars[k], *ensemble_);
        }
    }

    LossBundle parts;

    // 3) discriminator step on detached features: source-style features are
    // real for D_S on source images, target-style real for D_T on target
    auto disc_params = ensemble_->disc_params();
    if (adversarial) {
        std::vector<Var> terms_s, terms_t;
        for (int k = 0; k < b; ++k) {
            auto adv_s = adversarial_losses(
                discriminate(*ensemble_->disc_s, detach(fwd[k].features.f_ss)),
                discriminate(*ensemble_->disc_s, detach(fwd[k].features.f_st)));
            auto adv_t = adversarial_losses(
                discriminate(*ensemble_->disc_t, detach(fwd[k].features.f_tt)),
                discriminate(*ensemble_->disc_t, detach(fwd[k].features.f_ts)));
            terms_s.push_back(adv_s.discriminator_term);
            terms_t.push_back(adv_t.discriminator_term);
        }
        Var disc_s_loss = batch_mean(terms_s);
        Var disc_t_loss = batch_mean(terms_t);
        Var disc_total = add(disc_s_loss, disc_t_loss);
        parts.disc_s = disc_s_loss->value[0];
        parts.disc_t = disc_t_loss->value[0];

        apply_lr_schedule();
        zero_grads(disc_params);
        backward(disc_total);
        opt_disc_->step(disc_params);
    }

    // 4) student step on the combined loss, against the refreshed discriminators
    std::vector<Var> seg_s_terms, seg_t_terms, st_s_terms, st_t_terms, gen_s_terms, gen_t_terms;
    for (int k = 0; k < b; ++k) {
        seg_s_terms.push_back(
            seg_loss(fwd[k].logits_src_s, batch_s[k].label, kIgnoreIndex, &all_ignored_warnings_));
        seg_t_terms.push_back(
            seg_loss(fwd[k].logits_src_t, batch_s[k].label, kIgnoreIndex, &all_ignored_warnings_));
        if (st_active) {
            st_s_terms.push_back(st_loss(fwd[k].logits_tgt_s, pseudo[k]));
            st_t_terms.push_back(st_loss(fwd[k].logits_tgt_t, pseudo[k]));
        }
    }
    if (adversarial) {
        set_requires_grad(disc_params, false);
        for (int k = 0; k < b; ++k) {
            gen_s_terms.push_back(bce_logits_mean(
                discriminate(*ensemble_->disc_s, fwd[k].features.f_st), 1.0));
            gen_t_terms.push_back(bce_logits_mean(
                discriminate(*ensemble_->disc_t, fwd[k].features.f_ts), 1.0));
        }
    }

    Var seg_sum = add(batch_mean(seg_s_terms), batch_mean(seg_t_terms));
    parts.seg_s = batch_mean(seg_s_terms)->value[0];
    parts.seg_t = batch_mean(seg_t_terms)->value[0];
    Var total = seg_sum;
    if (st_active) {
        Var st_s = batch_mean(st_s_terms);
        Var st_t = batch_mean(st_t_terms);
        parts.st_s = st_s->value[0];
        parts.st_t = st_t->value[0];
        total = add(total, scale(add(st_s, st_t), config_.lambda));
    }
    if (adversarial) {
        Var gen_s = batch_mean(gen_s_terms);
        Var gen_t = batch_mean(gen_t_terms);
        parts.adv_s = gen_s->value[0];
        parts.adv_t = gen_t->value[0];
        total = add(total, scale(add(gen_s, gen_t), config_.beta));
    }

    LossBundle bundle;
    try {
        bundle = combine(parts, config_.lambda, config_.beta);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error("train_step " + std::to_string(step_) + ": " + e.what());
    }

    auto main_params = ensemble_->main_params();
    apply_lr_schedule();
    zero_grads(main_params);
    backward(total);
    if (adversarial) set_requires_grad(disc_params, true);
    opt_main_->step(main_params);

    ++step_;
    return bundle;
}

Checkpoint Trainer::make_checkpoint() const {
    Checkpoint ckpt;
    ckpt.config = config_;
    ckpt.step = step_;
    ckpt.num_classes = source_.manifest.num_classes();
    for (const auto& v : ensemble_->all_params()) ckpt.tensors["model." + v->name] = v->value;
    for (const auto& v : teacher_.params()) ckpt.tensors["teacher." + v->name] = v->value;
    std::map<std::string, Tensor> opt_state;
    opt_main_->save_state(opt_state, "opt_main.");
    opt_disc_->save_state(opt_state, "opt_disc.");
    ckpt.tensors.insert(opt_state.begin(), opt_state.end());
    ckpt.tensors["teacher_step"] = Tensor::scalar(static_cast<double>(teacher_.step));
    return ckpt;
}

Trainer Trainer::restore(const Checkpoint& ckpt, Dataset source, Dataset target) {
    Trainer trainer(ckpt.config, std::move(source), std::move(target));
    if (trainer.source_.manifest.num_classes() != ckpt.num_classes)
        throw DataError("checkpoint trained with " + std::to_string(ckpt.num_classes) +
                        " classes but dataset has " +
                        std::to_string(trainer.source_.manifest.num_classes()));
    auto load_into = [&](const std::vector<Var>& params, const std::string& prefix) {
        for (const auto& v : params) {
            auto it = ckpt.tensors.find(prefix + v->name);
            if (it == ckpt.tensors.end())
                throw std::runtime_error("checkpoint is missing tensor " + prefix + v->name);
            check_same_shape(v->value, it->second, "restore");
            v->value = it->second;
        }
    };
    load_into(trainer.ensemble_->all_params(), "model.");
    load_into(trainer.teacher_.params(), "teacher.");
    std::map<std::string, Tensor> opt_state(ckpt.tensors.begin(), ckpt.tensors.end());
    trainer.opt_main_->load_state(opt_state, "opt_main.");
    trainer.opt_disc_->load_state(opt_state, "opt_disc.");
    trainer.step_ = ckpt.step;
    auto ts = ckpt.tensors.find("teacher_step");
    trainer.teacher_.step = ts != ckpt.tensors.end() ? static_cast<long>(ts->second[0]) : 0;
    return trainer;
}

std::unique_ptr<Predictor> Trainer::predictor() const {
    if (config_.variant == "source_only")
        return std::make_unique<SinglePathPredictor>(ensemble_);
    return std::make_unique<EnsemblePredictor>(ensemble_);
}

Checkpoint fit(const TrainConfig& config, const Dataset& source, const Dataset& target,
               const std::string& out_dir, std::vector<TrainLogRecord>* log_out) {
    Trainer trainer(config, source, target);

    std::ofstream log_file;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        save_config(config, (fs::path(out_dir) / "config_snapshot.cfg").string());
        log_file.open((fs::path(out_dir) / "train_log.ndjson").string());
        if (!log_file) throw std::runtime_error("cannot open training log under " + out_dir);
    }

    for (long i = 0; i < config.max_iters; ++i) {
        TrainLogRecord rec;
        rec.losses = trainer.train_step();
        rec.step = trainer.step();
        if (log_out) log_out->push_back(rec);
        if (log_file) log_file << log_record_to_json(rec) << "\n";
        if (config.checkpoint_interval > 0 && trainer.step() % config.checkpoint_interval == 0 &&
            !out_dir.empty()) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_step%06ld.ckpt", trainer.step());
            save_checkpoint(trainer.make_checkpoint(), (fs::path(out_dir) / name).string());
        }
    }

    Checkpoint final = trainer.make_checkpoint();
    if (!out_dir.empty())
        save_checkpoint(final, (fs::path(out_dir) / "checkpoint.ckpt").string());
    return final;
}

EvalReport evaluate(const Predictor& predictor, const Dataset& dataset,
                    const Normalization& norm) {
    int k = dataset.manifest.num_classes();
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (!dataset.manifest.patches[i].has_label)
            throw DataError("evaluation patch '" + dataset.manifest.patches[i].id +
                            "' has no label");
        LabeledPatch patch = dataset.load_labeled(i, norm);
        Tensor pred = predictor.predict(patch.image);
        cm.accumulate(pred, patch.label, kIgnoreIndex);
    }
    return summarize(cm, dataset.manifest.class_names);
}

EvalReport evaluate(const Checkpoint& ckpt, const Dataset& dataset) {
    auto predictor = make_predictor(ckpt);
    return evaluate(*predictor, dataset, ckpt.config.normalization);
}

std::shared_ptr<StudentEnsemble> ensemble_from_checkpoint(const Checkpoint& ckpt) {
    Rng rng(ckpt.config.seed);
    auto ensemble = std::make_shared<StudentEnsemble>(
        ensemble_config_from(ckpt.config, ckpt.num_classes), rng);
    for (const auto& v : ensemble->all_params()) {
        auto it = ckpt.tensors.find("model." + v->name);
        if (it == ckpt.tensors.end())
            throw std::runtime_error("checkpoint is missing tensor model." + v->name);
        check_same_shape(v->value, it->second, "ensemble_from_checkpoint");
        v->value = it->second;
    }
    return ensemble;
}

std::unique_ptr<Predictor> make_predictor(const Checkpoint& ckpt) {
    auto ensemble = ensemble_from_checkpoint(ckpt);
    if (ckpt.config.variant == "source_only")
        return std::make_unique<SinglePathPredictor>(ensemble);
    return std::make_unique<EnsemblePredictor>(ensemble);
}

}  // namespace dsadapt
