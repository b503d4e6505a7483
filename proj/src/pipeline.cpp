#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "synthaug/corpus.hpp"
#include "synthaug/errors.hpp"
#include "synthaug/optim.hpp"
#include "synthaug/pipeline.hpp"

namespace synthaug::pipeline {

namespace fs = std::filesystem;

namespace {

// Top-level stream indices under the master seed.
enum : std::uint64_t {
    kCorpusStream = 1,
    kScenarioStream = 2,
    kDdpmStream = 3,
    kPgganStream = 4,
    kSynthDdpmStream = 5,
    kSynthPgganStream = 6,
    kExpertStream = 7,
    kClassifierStream = 8,
};

const std::vector<std::string> kGenerators{"ddpm", "pggan"};

std::ostream* g_log = nullptr;

void log(const std::string& stage, const std::string& msg) {
    if (g_log) *g_log << "[" << stage << "] " << msg << std::endl;
}

template <typename F>
auto in_stage(const std::string& stage, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
        if constexpr (std::is_void_v<decltype(body())>) {
            body();
            log(stage, "done in " + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
        } else {
            auto r = body();
            log(stage, "done in " + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
            return r;
        }
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

fs::path corpus_root(const ExperimentConfig& cfg) {
    return cfg.corpus.directory ? *cfg.corpus.directory : Layout{cfg.output_dir}.corpus();
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("failed writing " + path.string());
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

LabeledDataset class_subset(const LabeledDataset& ds, int label) {
    return ds.subset(ds.indices_of(label), ds.provenance());
}

LabeledDataset resized(const LabeledDataset& ds, int size) {
    if (ds.empty() || ds.image_shape()[1] == size) return ds;
    const Tensor imgs = resize_images(ds.images(), size);
    LabeledDataset out(ds.class_names(), ds.provenance());
    const auto c = imgs.dim(1);
    const auto item = static_cast<std::size_t>(c * size * size);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::vector<float> px(imgs.storage().begin() + static_cast<std::ptrdiff_t>(i * item),
                              imgs.storage().begin() + static_cast<std::ptrdiff_t>((i + 1) * item));
        out.add({ds[i].id, ds[i].label, Tensor({c, size, size}, std::move(px)), ds[i].provenance});
    }
    return out;
}

// Image size the generators and FID work at: the corpus geometry.
int corpus_size(const LabeledDataset& corpus) { return static_cast<int>(corpus.image_shape()[1]); }

pggan::GanConfig gan_config(const ExperimentConfig& cfg, int size) {
    auto g = cfg.pggan;
    g.target_resolution = size;
    g.channels = 1;
    return g;
}

NoiseSchedule schedule_of(const DdpmSettings& d) {
    return build_schedule(ScheduleKind::linear, d.timesteps, d.beta_start, d.beta_end);
}

// Synthetic images of one generator, split by class in corpus class order.
std::vector<LabeledDataset> load_synthetic(const ExperimentConfig& cfg, const std::string& generator,
                                           const std::vector<std::string>& class_names) {
    const auto root = Layout{cfg.output_dir}.synthetic(generator);
    auto all = corpus::load_corpus(root);
    if (all.class_names() != class_names) {
        throw FormatError("synthetic classes under " + root.string() + " do not match the corpus classes");
    }
    all.set_provenance(generator == "ddpm" ? Provenance::synthetic_ddpm : Provenance::synthetic_pggan);
    std::vector<LabeledDataset> out;
    for (int c = 0; c < static_cast<int>(class_names.size()); ++c) out.push_back(class_subset(all, c));
    return out;
}

std::unique_ptr<classify::Classifier> load_expert(const ExperimentConfig& cfg) {
    auto model = classify::build_model(cfg.expert.model, cfg.classifier.input_size);
    model->params().load(corpus::load_checkpoint(Layout{cfg.output_dir}.expert_checkpoint()));
    return model;
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    for (std::int64_t i = 0; i < t.dim(0); ++i) {
        for (std::int64_t j = 0; j < t.dim(1); ++j) m(i, j) = t[static_cast<std::size_t>(i * t.dim(1) + j)];
    }
    return m;
}

} // namespace

void set_log_stream(std::ostream* out) { g_log = out; }

fs::path Layout::test_ids(std::size_t k) const { return scenario() / ("test_" + std::to_string(k) + ".txt"); }

fs::path Layout::checkpoint(const std::string& generator, const std::string& class_name) const {
    return generator_dir(generator) / (class_name + ".agb1");
}

fs::path Layout::loss_trace(const std::string& generator, const std::string& class_name) const {
    return generator_dir(generator) / (class_name + "_loss.csv");
}

Tensor resize_images(const Tensor& images, int size) {
    if (images.rank() != 4 || images.dim(2) != images.dim(3)) {
        throw ShapeError("resize expects square [N, C, S, S] images, got " + shape_to_string(images.shape()));
    }
    const auto n = images.dim(0), c = images.dim(1), s = images.dim(2);
    if (s == size) return images;
    const bool up = size > s;
    const auto f = up ? size / s : s / size;
    if (size < 1 || f * (up ? s : size) != (up ? size : s) || (f & (f - 1))) {
        throw ShapeError("cannot resize " + std::to_string(s) + " px images to " + std::to_string(size));
    }
    Tensor out({n, c, size, size});
    for (std::int64_t p = 0; p < n * c; ++p) {
        const float* src = images.data().data() + p * s * s;
        float* dst = out.data().data() + p * size * size;
        for (std::int64_t y = 0; y < size; ++y) {
            for (std::int64_t x = 0; x < size; ++x) {
                if (up) {
                    dst[y * size + x] = src[(y / f) * s + x / f];
                } else {
                    double acc = 0;
                    for (std::int64_t dy = 0; dy < f; ++dy) {
                        for (std::int64_t dx = 0; dx < f; ++dx) acc += src[(y * f + dy) * s + x * f + dx];
                    }
                    dst[y * size + x] = static_cast<float>(acc / static_cast<double>(f * f));
                }
            }
        }
    }
    return out;
}

DdpmResult train_ddpm(const Tensor& images, const DdpmSettings& settings, RngStream& rng) {
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(0) < 1) {
        throw ShapeError("DDPM training expects [N, 1, S, S] images, got " + shape_to_string(images.shape()));
    }
    const auto n = static_cast<std::size_t>(images.dim(0));
    const int size = static_cast<int>(images.dim(2));
    UNet<float> net(settings.unet(size));
    auto init = rng.derive(1);
    auto data = rng.derive(2);
    auto noise = rng.derive(3);
    net.reset_parameters(init);
    const auto schedule = schedule_of(settings);
    const EpsModel model = as_eps_model(net);
    Adam opt(net.params().trainable_params(), settings.lr);

    const auto batch = std::min<std::size_t>(static_cast<std::size_t>(settings.batch_size), n);
    const auto item = static_cast<std::size_t>(size * size);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = n;

    DdpmResult r;
    const int steps = settings.training_steps(n);
    for (int step = 0; step < steps; ++step) {
        Tensor x0({static_cast<std::int64_t>(batch), 1, size, size});
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor == n) {
                data.shuffle(order);
                cursor = 0;
            }
            const auto src = images.storage().begin() + static_cast<std::ptrdiff_t>(order[cursor++] * item);
            std::copy(src, src + static_cast<std::ptrdiff_t>(item), x0.storage().begin() + static_cast<std::ptrdiff_t>(b * item));
        }
        opt.zero_grad();
        auto loss = ddpm_loss(x0, model, schedule, noise);
        const double l = loss.value().item();
        if (!std::isfinite(l)) throw NumericError("DDPM loss became non-finite at step " + std::to_string(step));
        ad::backward(loss);
        opt.step();
        r.losses.push_back(l);
    }
    r.weights = net.params().entries();
    return r;
}

void stage_corpus(const ExperimentConfig& cfg) {
    in_stage("gen-corpus", [&] {
        if (cfg.corpus.directory) {
            if (!fs::is_directory(*cfg.corpus.directory)) {
                throw std::runtime_error("corpus directory " + cfg.corpus.directory->string() + " does not exist");
            }
            const auto ds = corpus::load_corpus(*cfg.corpus.directory);
            log("gen-corpus", "using " + std::to_string(ds.size()) + " images from " + cfg.corpus.directory->string());
            return;
        }
        auto rng = cfg.corpus.seed ? RngStream(*cfg.corpus.seed, 0) : derive_stream(cfg.master_seed, kCorpusStream);
        const auto ds = corpus::generate_synthetic_corpus(cfg.corpus.n_per_class, cfg.corpus.size, rng);
        const auto root = Layout{cfg.output_dir}.corpus();
        fs::remove_all(root);
        corpus::save_corpus(ds, root);
        log("gen-corpus", "wrote " + std::to_string(ds.size()) + " images to " + root.string());
    });
}

void stage_scenario(const ExperimentConfig& cfg) {
    in_stage("scenario", [&] {
        const auto ds = corpus::load_corpus(corpus_root(cfg));
        auto rng = derive_stream(cfg.master_seed, kScenarioStream);
        const auto sc = selection::build_scenario(ds, cfg.scenario, rng);
        const Layout lay{cfg.output_dir};
        fs::remove_all(lay.scenario());
        fs::create_directories(lay.scenario());
        corpus::write_id_list(sc.train.ids(), lay.train_ids());
        for (std::size_t k = 0; k < sc.tests.size(); ++k) corpus::write_id_list(sc.tests[k].ids(), lay.test_ids(k));
        std::string counts = "set,class,count\n";
        auto add = [&](const std::string& set, const LabeledDataset& d) {
            for (int c = 0; c < static_cast<int>(d.class_names().size()); ++c) {
                counts += set + "," + d.class_names()[static_cast<std::size_t>(c)] + "," + std::to_string(d.count(c)) + "\n";
            }
        };
        add("train", sc.train);
        for (std::size_t k = 0; k < sc.tests.size(); ++k) add("test_" + std::to_string(k), sc.tests[k]);
        write_text(lay.scenario() / "counts.csv", counts);
        log("scenario", "train " + std::to_string(sc.train.size()) + ", " + std::to_string(sc.tests.size()) + " test set(s)");
    });
}

LoadedScenario load_scenario(const ExperimentConfig& cfg) {
    const Layout lay{cfg.output_dir};
    auto all = corpus::load_corpus(corpus_root(cfg));
    all.set_provenance(Provenance::original);
    LoadedScenario s{all, LabeledDataset(all.class_names(), Provenance::train), {}};
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < s.corpus.size(); ++i) index.emplace(s.corpus[i].id, i);
    auto pick = [&](const fs::path& path, Provenance p) {
        std::vector<std::size_t> idx;
        for (const auto& id : corpus::read_id_list(path)) {
            auto it = index.find(id);
            if (it == index.end()) throw FormatError(path.string() + " names id '" + id + "' which is not in the corpus");
            idx.push_back(it->second);
        }
        return s.corpus.subset(idx, p);
    };
    if (!fs::exists(lay.train_ids())) throw FormatError("no scenario at " + lay.scenario().string() + "; run the scenario stage first");
    s.train = pick(lay.train_ids(), Provenance::train);
    for (std::size_t k = 0; fs::exists(lay.test_ids(k)); ++k) s.tests.push_back(pick(lay.test_ids(k), Provenance::test));
    if (s.tests.empty()) throw FormatError("scenario at " + lay.scenario().string() + " has no test sets");
    return s;
}

void stage_train_ddpm(const ExperimentConfig& cfg) {
    in_stage("train-ddpm", [&] {
        const auto sc = load_scenario(cfg);
        const Layout lay{cfg.output_dir};
        fs::create_directories(lay.generator_dir("ddpm"));
        const auto base = derive_stream(cfg.master_seed, kDdpmStream);
        for (int c = 0; c < static_cast<int>(sc.train.class_names().size()); ++c) {
            const auto& name = sc.train.class_names()[static_cast<std::size_t>(c)];
            auto rng = base.derive(static_cast<std::uint64_t>(c));
            const auto images = class_subset(sc.train, c).images();
            const auto r = train_ddpm(images, cfg.ddpm, rng);
            corpus::save_checkpoint(r.weights, lay.checkpoint("ddpm", name));
            std::string csv = "step,loss\n";
            for (std::size_t i = 0; i < r.losses.size(); ++i) csv += std::to_string(i) + "," + fmt(r.losses[i]) + "\n";
            write_text(lay.loss_trace("ddpm", name), csv);
            log("train-ddpm", name + ": " + std::to_string(r.losses.size()) + " steps, final loss " +
                                  (r.losses.empty() ? std::string("n/a") : fmt(r.losses.back())));
        }
    });
}

void stage_train_pggan(const ExperimentConfig& cfg) {
    in_stage("train-pggan", [&] {
        const auto sc = load_scenario(cfg);
        const Layout lay{cfg.output_dir};
        fs::create_directories(lay.generator_dir("pggan"));
        const auto gan = gan_config(cfg, corpus_size(sc.corpus));
        const auto base = derive_stream(cfg.master_seed, kPgganStream);
        for (int c = 0; c < static_cast<int>(sc.train.class_names().size()); ++c) {
            const auto& name = sc.train.class_names()[static_cast<std::size_t>(c)];
            auto rng = base.derive(static_cast<std::uint64_t>(c));
            try {
                const auto r = pggan::train_pggan(class_subset(sc.train, c).images(), gan, rng);
                corpus::save_checkpoint(r.generator, lay.checkpoint("pggan", name));
                r.trace.write_csv(lay.loss_trace("pggan", name));
                log("train-pggan", name + ": " + std::to_string(r.trace.size()) + " steps");
            } catch (const pggan::TrainingAborted& e) {
                e.trace().write_csv(lay.loss_trace("pggan", name));
                throw;
            }
        }
    });
}

void stage_synth(const ExperimentConfig& cfg) {
    in_stage("synth", [&] {
        const auto sc = load_scenario(cfg);
        const Layout lay{cfg.output_dir};
        const int size = corpus_size(sc.corpus);
        const auto& names = sc.corpus.class_names();
        const std::int64_t count = cfg.synth_count();
        for (const auto& gen : kGenerators) {
            const bool is_ddpm = gen == "ddpm";
            LabeledDataset out(names, is_ddpm ? Provenance::synthetic_ddpm : Provenance::synthetic_pggan);
            const auto base = derive_stream(cfg.master_seed, is_ddpm ? kSynthDdpmStream : kSynthPgganStream);
            for (int c = 0; c < static_cast<int>(names.size()); ++c) {
                const auto& name = names[static_cast<std::size_t>(c)];
                const auto weights = corpus::load_checkpoint(lay.checkpoint(gen, name));
                auto rng = base.derive(static_cast<std::uint64_t>(c));
                Tensor images;
                if (is_ddpm) {
                    UNet<float> net(cfg.ddpm.unet(size));
                    net.params().load(weights);
                    images = ancestral_sample(as_eps_model(net), schedule_of(cfg.ddpm), count, {1, size, size}, rng);
                } else {
                    const auto g = pggan::load_generator(gan_config(cfg, size), weights);
                    ad::NoGradGuard no_grad;
                    images = g.sample(count, rng);
                }
                const auto item = static_cast<std::size_t>(size * size);
                for (std::int64_t i = 0; i < count; ++i) {
                    char id[96];
                    std::snprintf(id, sizeof id, "%s-%s-%05lld", gen.c_str(), name.c_str(), static_cast<long long>(i));
                    std::vector<float> px(images.storage().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * item),
                                          images.storage().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i + 1) * item));
                    // Round through the 8-bit grid so memory and disk agree.
                    for (auto& v : px) v = corpus::dequantize(corpus::quantize(v));
                    out.add({id, c, Tensor({1, size, size}, std::move(px)), out.provenance()});
                }
            }
            fs::remove_all(lay.synthetic(gen));
            corpus::save_corpus(out, lay.synthetic(gen));
            log("synth", gen + ": " + std::to_string(out.size()) + " images");
        }
    });
}

void stage_fid(const ExperimentConfig& cfg) {
    in_stage("fid", [&] {
        const auto sc = load_scenario(cfg);
        const Layout lay{cfg.output_dir};
        const int in = cfg.classifier.input_size;
        const auto& names = sc.corpus.class_names();

        // Expert: trained on the real training set only.
        classify::TrainProtocol p;
        p.epochs = cfg.expert.epochs;
        p.batch_size = cfg.classifier.batch_size;
        p.lr = cfg.classifier.lr;
        p.runs = 1;
        const auto train_in = resized(sc.train, in);
        std::vector<LabeledDataset> tests_in;
        for (const auto& t : sc.tests) tests_in.push_back(resized(t, in));
        auto seed_rng = derive_stream(cfg.master_seed, kExpertStream);
        const auto runs = classify::train_and_evaluate(
            [&] { return classify::build_model(cfg.expert.model, in); }, train_in, tests_in, p, seed_rng.next_u64(),
            [&](int, classify::Classifier& m) {
                fs::create_directories(lay.expert_checkpoint().parent_path());
                corpus::save_checkpoint(m.params().entries(), lay.expert_checkpoint());
            });
        log("fid", "expert test accuracy " + fmt(runs.front().metrics.accuracy));
        auto expert = load_expert(cfg);
        const metrics::FeatureFn expert_fn = [&](const Tensor& images) {
            return to_matrix(expert->embed(resize_images(images, in)));
        };
        const metrics::Predictor predict = [&](const Tensor& images) { return expert->predict(images); };

        std::vector<FidRow> fid_rows;
        std::vector<ExpertRow> expert_rows;
        for (const auto& gen : kGenerators) {
            const auto synth = load_synthetic(cfg, gen, names);
            for (int c = 0; c < static_cast<int>(names.size()); ++c) {
                const auto& name = names[static_cast<std::size_t>(c)];
                const Tensor real = class_subset(sc.train, c).images();
                const Tensor fake = synth[static_cast<std::size_t>(c)].images();
                for (auto ex : cfg.fid_extractors) {
                    const auto a = metrics::feature_stats(real, ex, expert_fn);
                    const auto b = metrics::feature_stats(fake, ex, expert_fn);
                    fid_rows.push_back({gen, name, metrics::to_string(ex), metrics::frechet_distance(b, a)});
                }
                const double agree = metrics::expert_agreement(predict, resize_images(fake, in), c, {1, in, in});
                expert_rows.push_back({gen, name, agree});
            }
        }
        write_text(lay.report() / "fid.csv", fid_csv(fid_rows));
        write_text(lay.report() / "expert.csv", expert_csv(expert_rows));
    });
}

void stage_classifiers(const ExperimentConfig& cfg) {
    in_stage("train-classifier", [&] {
        const auto sc = load_scenario(cfg);
        const Layout lay{cfg.output_dir};
        const int in = cfg.classifier.input_size;
        const auto& names = sc.corpus.class_names();
        const auto n_classes = names.size();

        std::vector<std::size_t> add(n_classes, 0);
        const auto n = static_cast<std::size_t>(cfg.synth_count());
        if (cfg.scenario.kind == selection::ScenarioKind::small) {
            std::fill(add.begin(), add.end(), n);
        } else {
            add.at(static_cast<std::size_t>(cfg.scenario.minor_label)) = n;
        }

        std::vector<std::pair<std::string, LabeledDataset>> variants;
        variants.emplace_back("original", resized(sc.train, in));
        for (const auto& gen : kGenerators) {
            const auto synth = load_synthetic(cfg, gen, names);
            variants.emplace_back(gen, resized(selection::mix_with_synthetic(sc.train, synth, add), in));
        }
        std::vector<LabeledDataset> tests;
        for (const auto& t : sc.tests) tests.push_back(resized(t, in));

        std::vector<RunRow> rows;
        const auto base = derive_stream(cfg.master_seed, kClassifierStream);
        for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
            const auto kind = cfg.models[mi];
            classify::TrainProtocol p;
            p.epochs = cfg.classifier.epochs_for(kind);
            p.batch_size = cfg.classifier.batch_size;
            p.lr = cfg.classifier.lr;
            p.runs = cfg.runs;
            // Same seed for every variant so runs are paired across variants.
            auto seed_rng = base.derive(static_cast<std::uint64_t>(kind));
            const auto seed = seed_rng.next_u64();
            for (const auto& [variant, train] : variants) {
                classify::RunCallback save;
                if (cfg.classifier.save_checkpoints) {
                    save = [&, v = variant](int run, classify::Classifier& m) {
                        fs::create_directories(lay.classifiers());
                        corpus::save_checkpoint(m.params().entries(), lay.classifiers() / (classify::to_string(kind) + "-" + v + "-run" + std::to_string(run) + ".agb1"));
                    };
                }
                const auto results = classify::train_and_evaluate([&] { return classify::build_model(kind, in); }, train,
                                                                  tests, p, seed, save);
                for (std::size_t r = 0; r < results.size(); ++r) {
                    const auto& m = results[r].metrics;
                    rows.push_back({classify::to_string(kind), selection::to_string(cfg.scenario.kind),
                                    selection::to_string(cfg.scenario.sampling), variant, static_cast<int>(r), m.accuracy,
                                    m.precision, m.recall, m.f1});
                }
                log("train-classifier", classify::to_string(kind) + "/" + variant + ": " + std::to_string(train.size()) +
                                            " training images, " + std::to_string(results.size()) + " runs");
            }
        }
        write_text(lay.report() / "runs.csv", runs_csv(rows));
    });
}

ExperimentReport stage_report(const ExperimentConfig& cfg) {
    return in_stage("report", [&] {
        const Layout lay{cfg.output_dir};
        auto report = read_report(lay.report());
        emit_report(report, lay.report());
        return report;
    });
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config.json", config_to_json(cfg));
    stage_corpus(cfg);
    stage_scenario(cfg);
    stage_train_ddpm(cfg);
    stage_train_pggan(cfg);
    stage_synth(cfg);
    stage_fid(cfg);
    stage_classifiers(cfg);
    return stage_report(cfg);
}

} // namespace synthaug::pipeline
