#include "amil/amil.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "amil/bags.hpp"
#include "amil/checkpoint.hpp"
#include "amil/errors.hpp"
#include "amil/localization.hpp"
#include "amil/model.hpp"
#include "amil/train.hpp"

// Training through this interface runs in single precision; checkpoints store
// 32-bit floats either way.
using ModelF = amil::Model<float>;

struct amil_dataset {
    std::vector<amil::SourceImage> images;
};

struct amil_model {
    ModelF model;
};

namespace {

thread_local std::string g_last_error;

amil_status fail(amil_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

// Runs fn, translating the library's exceptions onto status codes.
template <class Fn>
amil_status guard(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return AMIL_OK;
    } catch (const amil::DimensionError& e) {
        return fail(AMIL_ERR_DIMENSION, e.what());
    } catch (const amil::GeometryError& e) {
        return fail(AMIL_ERR_GEOMETRY, e.what());
    } catch (const amil::ContractError& e) {
        return fail(AMIL_ERR_CONTRACT, e.what());
    } catch (const amil::IngestionError& e) {
        return fail(AMIL_ERR_INGESTION, e.what());
    } catch (const amil::TrainingError& e) {
        return fail(AMIL_ERR_TRAINING, e.what());
    } catch (const amil::IoError& e) {
        return fail(AMIL_ERR_IO, e.what());
    } catch (const std::exception& e) {
        return fail(AMIL_ERR_CONTRACT, e.what());
    }
}

bool bad_arg(const void* p) { return p == nullptr; }

}  // namespace

extern "C" {

const char* amil_version(void) { return "1.0.0"; }

const char* amil_last_error(void) { return g_last_error.c_str(); }

amil_status amil_synth_write(const char* out_dir, int n_bags, int grid_rows, int grid_cols,
                             int patch_size, double positive_fraction, double motif_rate,
                             uint64_t seed) {
    if (bad_arg(out_dir)) return fail(AMIL_ERR_INVALID_ARGUMENT, "out_dir is null");
    return guard([&] {
        amil::SynthSpec spec;
        spec.n_bags = n_bags;
        spec.grid_rows = grid_rows;
        spec.grid_cols = grid_cols;
        spec.patch_size = patch_size;
        spec.positive_fraction = positive_fraction;
        spec.motif_rate = motif_rate;
        spec.seed = seed;
        amil::SynthDataset ds = amil::synth_generate(spec);

        namespace fs = std::filesystem;
        const fs::path root(out_dir);
        fs::create_directories(root / "images");
        std::vector<std::string> ids;
        std::vector<int> labels;
        for (const auto& img : ds.images) {
            const std::string rel = "images/" + img.id;
            amil::write_png((root / rel).string(), img);
            ids.push_back(rel);
            labels.push_back(img.label);
        }
        amil::write_labels_csv((root / "labels.csv").string(), ids, labels);
        amil::write_truth_csv((root / "truth.csv").string(), ids, ds.truth_cells);
    });
}

amil_status amil_dataset_open(const char* root_dir, const char* labels_csv, amil_dataset** out) {
    if (bad_arg(root_dir) || bad_arg(labels_csv) || bad_arg(out))
        return fail(AMIL_ERR_INVALID_ARGUMENT, "null argument to amil_dataset_open");
    *out = nullptr;
    return guard([&] {
        auto ds = std::make_unique<amil_dataset>();
        ds->images = amil::load_dataset(root_dir, labels_csv);
        *out = ds.release();
    });
}

void amil_dataset_close(amil_dataset* dataset) { delete dataset; }

int64_t amil_dataset_size(const amil_dataset* dataset) {
    return dataset ? static_cast<int64_t>(dataset->images.size()) : 0;
}

void amil_train_options_init(amil_train_options* options) {
    if (!options) return;
    options->learning_rate = 0.001;
    options->epochs = 10;
    options->seed = 0;
    options->pooling = AMIL_POOLING_ATTENTION;
    options->augment = 1;
    options->optimizer = AMIL_OPTIMIZER_ADAM;
    options->weight_decay = 0.0;
    options->patch_size = 28;
    options->stride = 28;
    options->attention_dim = 128;
    options->split_fraction = 0.8;
    options->record_timing = 0;
    options->log_progress = 0;
    options->resume_from = nullptr;
}

namespace {

amil::TrainConfig to_train_config(const amil_train_options& o) {
    amil::TrainConfig cfg;
    cfg.learning_rate = o.learning_rate;
    cfg.epochs = o.epochs;
    cfg.seed = o.seed;
    switch (o.pooling) {
        case AMIL_POOLING_ATTENTION: cfg.pooling = amil::PoolingMode::attention; break;
        case AMIL_POOLING_MAX: cfg.pooling = amil::PoolingMode::max; break;
        case AMIL_POOLING_MEAN: cfg.pooling = amil::PoolingMode::mean; break;
        default: throw amil::ContractError("unknown pooling mode id " + std::to_string(o.pooling));
    }
    switch (o.optimizer) {
        case AMIL_OPTIMIZER_ADAM: cfg.optimizer = amil::OptimizerKind::adam; break;
        case AMIL_OPTIMIZER_SGD: cfg.optimizer = amil::OptimizerKind::sgd; break;
        default:
            throw amil::ContractError("unknown optimizer id " + std::to_string(o.optimizer));
    }
    cfg.augment = o.augment != 0;
    cfg.weight_decay = o.weight_decay;
    cfg.tiling.patch_size = o.patch_size;
    cfg.tiling.stride = o.stride;
    cfg.attention_dim = o.attention_dim;
    cfg.record_timing = o.record_timing != 0;
    return cfg;
}

}  // namespace

amil_status amil_train(const amil_dataset* dataset, const amil_train_options* options,
                       const char* out_dir, double* best_val_acc) {
    if (bad_arg(dataset) || bad_arg(options) || bad_arg(out_dir))
        return fail(AMIL_ERR_INVALID_ARGUMENT, "null argument to amil_train");
    return guard([&] {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        const amil::TrainConfig cfg = to_train_config(*options);
        auto [train_images, val_images] =
            amil::split_train_val(dataset->images, options->split_fraction, options->seed);
        amil::FitOptions fit_options;
        fit_options.checkpoint_dir = out_dir;
        fit_options.log_progress = options->log_progress != 0;
        if (options->resume_from) fit_options.resume_from = options->resume_from;
        amil::FitResult<float> result = amil::fit<float>(train_images, val_images, cfg, fit_options);
        amil::write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), result.metrics);
        if (best_val_acc) *best_val_acc = result.best_val;
    });
}

amil_status amil_model_open(const char* checkpoint_path, amil_model** out) {
    if (bad_arg(checkpoint_path) || bad_arg(out))
        return fail(AMIL_ERR_INVALID_ARGUMENT, "null argument to amil_model_open");
    *out = nullptr;
    return guard([&] {
        auto m = std::make_unique<amil_model>();
        m->model = amil::model_from_checkpoint<float>(amil::load_checkpoint(checkpoint_path));
        *out = m.release();
    });
}

void amil_model_close(amil_model* model) { delete model; }

amil_status amil_model_save(const amil_model* model, const char* checkpoint_path) {
    if (bad_arg(model) || bad_arg(checkpoint_path))
        return fail(AMIL_ERR_INVALID_ARGUMENT, "null argument to amil_model_save");
    return guard([&] {
        amil::save_checkpoint(checkpoint_path, amil::checkpoint_from_model(model->model));
    });
}

amil_status amil_model_pooling(const amil_model* model, int* pooling) {
    if (bad_arg(model) || bad_arg(pooling))
        return fail(AMIL_ERR_INVALID_ARGUMENT, "null argument to amil_model_pooling");
    switch (model->model.config.pooling) {
        case amil::PoolingMode::attention: *pooling = AMIL_POOLING_ATTENTION; break;
        case amil::PoolingMode::max: *pooling = AMIL_POOLING_MAX; break;
        case amil::PoolingMode::mean: *pooling = AMIL_POOLING_MEAN; break;
    }
    return AMIL_OK;
}

amil_status amil_model_patch_size(const amil_model* model, int* patch_size) {
    if (bad_arg(model) || bad_arg(patch_size))
        return fail(AMIL_ERR_INVALID_ARGUMENT, "null argument to amil_model_patch_size");
    *patch_size = static_cast<int>(model->model.config.tiling.patch_size);
    return AMIL_OK;
}

amil_status amil_evaluate(const amil_model* model, const amil_dataset* dataset,
                          const char* predictions_csv, double* accuracy) {
    if (bad_arg(model) || bad_arg(dataset) || bad_arg(accuracy))
        return fail(AMIL_ERR_INVALID_ARGUMENT, "null argument to amil_evaluate");
    return guard([&] {
        if (dataset->images.empty()) throw amil::ContractError("evaluate: dataset is empty");
        std::ofstream pred;
        if (predictions_csv) {
            pred.open(predictions_csv, std::ios::binary);
            if (!pred) throw amil::IoError(std::string("cannot create file: ") + predictions_csv);
            pred << "path,label,probability,prediction\n";
        }
        std::int64_t correct = 0;
        char buf[64];
        for (const auto& img : dataset->images) {
            amil::Bag<float> bag = amil::tile<float>(img, model->model.config.tiling);
            auto fr = amil::forward_bag(bag, model->model, static_cast<amil::Tape<float>*>(nullptr));
            const double p = static_cast<double>(fr.probability.item());
            const int predicted = p > 0.5 ? 1 : 0;
            if (predicted == img.label) ++correct;
            if (predictions_csv) {
                std::snprintf(buf, sizeof buf, ",%d,%.6f,%d\n", img.label, p, predicted);
                pred << img.id << buf;
            }
        }
        if (predictions_csv) {
            pred.close();
            if (!pred) throw amil::IoError(std::string("short write: ") + predictions_csv);
        }
        *accuracy = static_cast<double>(correct) / static_cast<double>(dataset->images.size());
    });
}

amil_status amil_predict_image(const amil_model* model, const char* image_path,
                               double* probability) {
    if (bad_arg(model) || bad_arg(image_path) || bad_arg(probability))
        return fail(AMIL_ERR_INVALID_ARGUMENT, "null argument to amil_predict_image");
    return guard([&] {
        const amil::SourceImage img = amil::read_image(image_path);
        amil::Bag<float> bag = amil::tile<float>(img, model->model.config.tiling);
        auto fr = amil::forward_bag(bag, model->model, static_cast<amil::Tape<float>*>(nullptr));
        *probability = static_cast<double>(fr.probability.item());
    });
}

amil_status amil_render_heatmap(const amil_model* model, const char* image_path,
                                const char* overlay_png, const char* attention_csv,
                                double alpha) {
    if (bad_arg(model) || bad_arg(image_path) || bad_arg(overlay_png) || bad_arg(attention_csv))
        return fail(AMIL_ERR_INVALID_ARGUMENT, "null argument to amil_render_heatmap");
    return guard([&] {
        if (model->model.config.pooling != amil::PoolingMode::attention)
            throw amil::ContractError(
                "heatmaps need an attention-pooling model; this checkpoint uses " +
                amil::pooling_name(model->model.config.pooling) + " pooling");
        const amil::SourceImage img = amil::read_image(image_path);
        amil::Bag<float> bag = amil::tile<float>(img, model->model.config.tiling);
        auto fr = amil::forward_bag(bag, model->model, static_cast<amil::Tape<float>*>(nullptr));
        amil::Heatmap heatmap =
            amil::attention_to_heatmap(*fr.attention, bag, model->model.config.tiling);
        amil::write_png(overlay_png, amil::render_overlay(img, heatmap, alpha));
        amil::write_heatmap_csv(attention_csv, heatmap);
    });
}

}  // extern "C"
