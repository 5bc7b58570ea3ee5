#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vnn/binary_io.hpp"
#include "vnn/data.hpp"
#include "vnn/errors.hpp"
#include "vnn/gradcheck.hpp"
#include "vnn/metrics.hpp"
#include "vnn/model.hpp"
#include "vnn/rng.hpp"
#include "vnn/trainer.hpp"

namespace vnn::cli {

namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> parse_sizes(const std::string& text, char sep = ',') {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw ConfigError("invalid size '" + item + "' in '" + text + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError("expected a list of positive sizes, got '" + text + "'");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void log_config(std::ostream& err, const std::string& command, const nlohmann::ordered_json& resolved) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config"] = resolved;
  err << "resolved config: " << j.dump() << "\n";
}

// ---------------------------------------------------------------------------

struct SynthFlags {
  std::size_t classes = 4;
  int confusable_pairs = -1;
  std::size_t views = 12;
  std::size_t dim = 32;
  std::size_t per_class = 150;
  double sigma = 0.05;
  std::uint64_t seed = 7;
  double train_fraction = 0.8;
  std::size_t ngram_check = 0;
  std::string out;
};

int cmd_synth(const SynthFlags& f, std::ostream& out, std::ostream& err) {
  SyntheticSpec spec;
  spec.classes = f.classes;
  spec.confusable_pairs = f.confusable_pairs < 0 ? f.classes / 2 : static_cast<std::size_t>(f.confusable_pairs);
  spec.views = f.views;
  spec.dim = f.dim;
  spec.samples_per_class = f.per_class;
  spec.sigma = f.sigma;
  spec.seed = f.seed;
  log_config(err, "synth",
             {{"classes", spec.classes}, {"confusable_pairs", spec.confusable_pairs}, {"views", spec.views},
              {"dim", spec.dim}, {"per_class", spec.samples_per_class}, {"sigma", spec.sigma},
              {"seed", spec.seed}, {"train_fraction", f.train_fraction}, {"ngram_check", f.ngram_check},
              {"out", f.out}});
  if (f.ngram_check > 0 && spec.views < f.ngram_check) {
    throw ConfigError("|V|=" + std::to_string(spec.views) + " views cannot hold an n-gram of size n=" +
                      std::to_string(f.ngram_check));
  }
  if (!(f.train_fraction >= 0 && f.train_fraction <= 1)) throw ConfigError("--train-fraction must lie in [0, 1]");
  const SyntheticDataset ds = generate_synthetic(spec);
  const fs::path dir(f.out);
  Manifest manifest = write_synthetic(ds, dir);
  std::vector<std::pair<std::string, double>> fractions{{"train", f.train_fraction}};
  if (f.train_fraction < 1) fractions.emplace_back("test", 1.0 - f.train_fraction);
  SplitResult split = split_dataset(manifest, fractions, derive_seed(spec.seed, 2));
  for (const auto& w : split.warnings) err << "warning: " << w << "\n";
  const fs::path manifest_path = dir / "manifest.json";
  write_manifest(manifest_path, split.manifest);
  err << "wrote " << split.manifest.records.size() << " view files\n";
  out << manifest_path.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string manifest;
  std::string out;
  std::string loss_log;
  std::string split = "train";
  std::string resume;
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  double clip = 0.01;
  std::size_t epochs = 150;
  std::size_t batch_size = 8;
  std::string ngram_sizes = "3,5,7";
  std::size_t dprime = 512;
  bool circular = false;
  bool post_conv_relu = true;
  std::string aggregation = "attention";
  std::uint64_t seed = 0;
};

std::string format_loss_log(const std::vector<double>& history) {
  std::string text;
  char line[64];
  for (std::size_t i = 0; i < history.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.17g\n", i + 1, history[i]);
    text += line;
  }
  return text;
}

int cmd_train(const TrainFlags& f, std::ostream& out, std::ostream& err) {
  const fs::path manifest_path(f.manifest);
  const Manifest manifest = read_manifest(manifest_path);
  const std::vector<Sample> samples = load_samples(manifest, manifest_path.parent_path(), f.split);
  if (samples.empty()) throw DataError("no samples with split '" + f.split + "' in " + f.manifest);

  std::unique_ptr<Trainer> trainer;
  if (!f.resume.empty()) {
    Checkpoint ck = load_checkpoint(f.resume);
    ck.train_config.epochs = f.epochs;
    trainer = std::make_unique<Trainer>(std::move(ck));
  } else {
    TrainConfig tc;
    tc.learning_rate = f.lr;
    tc.momentum = f.momentum;
    tc.weight_decay = f.weight_decay;
    tc.clip_bound = f.clip;
    tc.epochs = f.epochs;
    tc.batch_size = f.batch_size;
    tc.seed = f.seed;
    ModelConfig mc;
    mc.input_dim = samples.front().views.dim();
    mc.num_classes = manifest.num_classes();
    mc.aggregation = parse_aggregation(f.aggregation);
    for (std::size_t n : parse_sizes(f.ngram_sizes)) mc.branches.push_back({n, f.dprime, f.circular, f.post_conv_relu});
    if (!f.circular) {
      for (const auto& s : samples) {
        if (s.views.views() < mc.max_gram()) {
          throw ConfigError("sample '" + s.id + "' has |V|=" + std::to_string(s.views.views()) +
                            " views, fewer than n-gram size n=" + std::to_string(mc.max_gram()));
        }
      }
    }
    trainer = std::make_unique<Trainer>(std::move(mc), tc);
  }

  const auto& tc = trainer->config();
  const auto& mc = trainer->model().config;
  nlohmann::ordered_json branches = nlohmann::ordered_json::array();
  for (const auto& b : mc.branches) {
    branches.push_back({{"n", b.n}, {"d_prime", b.d_prime}, {"circular", b.circular},
                        {"post_conv_activation", b.post_conv_activation}});
  }
  log_config(err, "train",
             {{"manifest", f.manifest}, {"split", f.split}, {"samples", samples.size()}, {"out", f.out},
              {"resume", f.resume}, {"lr", tc.learning_rate}, {"momentum", tc.momentum},
              {"weight_decay", tc.weight_decay}, {"clip", tc.clip_bound}, {"epochs", tc.epochs},
              {"batch_size", tc.batch_size}, {"seed", tc.seed}, {"input_dim", mc.input_dim},
              {"num_classes", mc.num_classes}, {"aggregation", to_string(mc.aggregation)}, {"branches", branches}});

  trainer->run(samples, [&err](std::size_t epoch, double loss) {
    if (!std::isfinite(loss)) throw NumericError("non-finite epoch loss at epoch " + std::to_string(epoch));
    err << "epoch " << epoch << " loss " << loss << "\n";
  });

  save_checkpoint(f.out, trainer->checkpoint());
  const std::string log_path = f.loss_log.empty() ? f.out + ".loss.csv" : f.loss_log;
  write_text(log_path, format_loss_log(trainer->loss_history()));
  out << f.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EmbedFlags {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string out;
};

int cmd_embed(const EmbedFlags& f, std::ostream& out, std::ostream& err) {
  log_config(err, "embed", {{"checkpoint", f.checkpoint}, {"manifest", f.manifest}, {"split", f.split}, {"out", f.out}});
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const fs::path manifest_path(f.manifest);
  const Manifest manifest = read_manifest(manifest_path);
  const std::string split = f.split == "all" ? "" : f.split;
  const std::vector<Sample> samples = load_samples(manifest, manifest_path.parent_path(), split);
  if (samples.empty()) throw DataError("split selection '" + f.split + "' matched no samples");
  const Model model{ck.model_config, ck.params};
  std::vector<DescriptorRecord> records;
  records.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.views.dim() != model.config.input_dim) {
      throw DataError("sample '" + s.id + "' has D=" + std::to_string(s.views.dim()) + " but checkpoint expects D=" +
                      std::to_string(model.config.input_dim));
    }
    records.push_back({s.id, extract_descriptor(model, s.views)});
  }
  write_descriptors(f.out, records, kDescriptorDim);
  err << "wrote " << records.size() << " descriptors\n";
  out << f.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvaluateFlags {
  std::string manifest;
  std::string query;
  std::string gallery;
  std::string similarity = "cosine";
  std::size_t f1_cutoff = 32;
  std::size_t ndcg_cutoff = 0;
  bool normalize = false;
  std::string relevance = "binary";
  std::string json;
  std::string pr_csv;
};

DescriptorSet to_descriptor_set(const std::vector<DescriptorRecord>& records, const Manifest& manifest,
                                const std::string& split) {
  std::map<std::string, const ManifestRecord*> by_id;
  for (const auto& r : manifest.records) by_id[r.id] = &r;
  DescriptorSet set;
  set.split = split;
  for (const auto& rec : records) {
    auto it = by_id.find(rec.id);
    if (it == by_id.end()) throw DataError("descriptor id '" + rec.id + "' is not in the manifest");
    set.entries.push_back({rec.id, it->second->class_label, "", rec.values});
  }
  return set;
}

int cmd_evaluate(const EvaluateFlags& f, std::ostream& out, std::ostream& err) {
  EvalOptions opt;
  opt.similarity = parse_similarity(f.similarity);
  opt.f1_cutoff = f.f1_cutoff;
  opt.ndcg_cutoff = f.ndcg_cutoff;
  opt.normalize = f.normalize;
  opt.relevance = parse_relevance(f.relevance);
  const std::string gallery_path = f.gallery.empty() ? f.query : f.gallery;
  log_config(err, "evaluate",
             {{"manifest", f.manifest}, {"query", f.query}, {"gallery", gallery_path},
              {"similarity", to_string(opt.similarity)}, {"f1_cutoff", opt.f1_cutoff},
              {"ndcg_cutoff", opt.ndcg_cutoff}, {"normalize", opt.normalize},
              {"relevance", to_string(opt.relevance)}, {"json", f.json}, {"pr_csv", f.pr_csv}});

  const Manifest manifest = read_manifest(f.manifest);
  const DescriptorSet queries = to_descriptor_set(read_descriptors(f.query), manifest, "query");
  const DescriptorSet gallery = to_descriptor_set(read_descriptors(gallery_path), manifest, "gallery");
  const RetrievalReport report = evaluate_retrieval(queries, gallery, opt);
  const std::string json = report_to_json(report);
  if (f.json.empty()) {
    out << json;
  } else {
    write_text(f.json, json);
    out << f.json << "\n";
  }
  if (!f.pr_csv.empty()) {
    std::string csv = "query,rank,recall,precision\n";
    char line[256];
    for (const auto& q : report.per_query) {
      for (std::size_t i = 0; i < q.curve.size(); ++i) {
        std::snprintf(line, sizeof line, ",%zu,%.6f,%.6f\n", i + 1, q.curve[i].recall, q.curve[i].precision);
        csv += q.id + line;
      }
    }
    write_text(f.pr_csv, csv);
  }
  const auto& a = report.aggregates;
  err << "micro mAP " << a.map.micro << " macro mAP " << a.map.macro << " undefined queries "
      << report.undefined_queries << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckFlags {
  double step = 1e-5;
  std::string branches = "1,2,3,3+5";
  std::size_t views = 6;
  std::size_t dim = 8;
  std::size_t dprime = 4;
  std::size_t classes = 3;
  std::uint64_t seed = 0;
  double threshold = 1e-4;
  std::string break_adjoint;
};

int cmd_gradcheck(const GradcheckFlags& f, std::ostream& out, std::ostream& err) {
  log_config(err, "gradcheck",
             {{"step", f.step}, {"branches", f.branches}, {"views", f.views}, {"dim", f.dim}, {"dprime", f.dprime},
              {"classes", f.classes}, {"seed", f.seed}, {"threshold", f.threshold},
              {"break_adjoint", f.break_adjoint}});
  std::vector<std::vector<std::size_t>> sets;
  std::stringstream ss(f.branches);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) sets.push_back(parse_sizes(item, '+'));
  }
  if (sets.empty()) throw ConfigError("--branches lists no branch sets");

  TapeOptions tape_options{f.break_adjoint};
  Rng rng(f.seed);
  std::vector<Real> values(f.views * f.dim);
  for (auto& v : values) v = static_cast<Real>(rng.normal());
  const ViewMatrix views(f.views, f.dim, values);
  const std::size_t label = f.classes > 1 ? 1 : 0;

  double worst = 0;
  std::string worst_name;
  auto started = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < sets.size(); ++k) {
    ModelConfig mc;
    mc.input_dim = f.dim;
    mc.num_classes = f.classes;
    for (std::size_t n : sets[k]) mc.branches.push_back({n, f.dprime, false, true});
    ModelParameters params = init_parameters(mc, derive_seed(f.seed, k + 1));
    const GradCheckResult r = finite_diff_check(
        params.tensors,
        [&](Tape& tape, ParameterSet&) {
          Var input = tape.constant_view(views.tensor());
          return cross_entropy(multi_scale_forward(input, mc, bind_trainable(tape, params)).logits, label);
        },
        static_cast<Real>(f.step), tape_options);
    std::string name = "{";
    for (std::size_t i = 0; i < sets[k].size(); ++i) name += (i ? "," : "") + std::to_string(sets[k][i]);
    name += "}";
    char line[256];
    std::snprintf(line, sizeof line, "branches %s: max relative error %.3e over %zu elements (worst %s[%zu])\n",
                  name.c_str(), r.max_relative_error, r.elements_checked, r.worst_parameter.c_str(), r.worst_index);
    out << line;
    if (worst_name.empty() || !(r.max_relative_error <= worst)) {
      worst = r.max_relative_error;
      worst_name = name + " " + r.worst_parameter;
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  char line[256];
  std::snprintf(line, sizeof line, "overall max relative error %.3e (threshold %.1e, %.2f s)\n", worst, f.threshold,
                seconds);
  out << line;
  if (!(worst < f.threshold)) {
    err << "gradient check failed; worst parameter " << worst_name << "\n";
    return kCheckFailed;
  }
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
  if (dynamic_cast<const NumericError*>(&e)) return kNumericError;
  // Everything else, including filesystem errors, is a data/IO failure.
  return kDataError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"View n-gram network: synthetic data, training, descriptors and retrieval metrics", "vnn"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  SynthFlags synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic view-feature dataset and manifest");
  s->add_option("--classes", synth.classes, "Number of classes");
  s->add_option("--confusable-pairs", synth.confusable_pairs, "Class pairs differing only in view order (-1: classes/2)");
  s->add_option("--views", synth.views, "Views per shape |V|");
  s->add_option("--dim", synth.dim, "View feature dimension D");
  s->add_option("--per-class", synth.per_class, "Samples per class");
  s->add_option("--sigma", synth.sigma, "Gaussian noise standard deviation");
  s->add_option("--seed", synth.seed, "Generator seed");
  s->add_option("--train-fraction", synth.train_fraction, "Per-class fraction tagged train; the rest is test");
  s->add_option("--ngram-check", synth.ngram_check, "Refuse when |V| is below this n-gram size (0: off)");
  s->add_option("--out", synth.out, "Output directory")->required();

  TrainFlags train;
  auto* t = app.add_subcommand("train", "Train the model and write a checkpoint");
  t->add_option("--manifest", train.manifest, "Dataset manifest")->required();
  t->add_option("--out", train.out, "Checkpoint path")->required();
  t->add_option("--loss-log", train.loss_log, "Per-epoch loss log (default: <out>.loss.csv)");
  t->add_option("--split", train.split, "Manifest split to train on");
  t->add_option("--resume", train.resume, "Continue from this checkpoint until --epochs");
  t->add_option("--lr", train.lr, "Learning rate");
  t->add_option("--momentum", train.momentum, "SGD momentum");
  t->add_option("--weight-decay", train.weight_decay, "L2 weight decay");
  t->add_option("--clip", train.clip, "Elementwise gradient clip bound");
  t->add_option("--epochs", train.epochs, "Training epochs");
  t->add_option("--batch-size", train.batch_size, "Mini-batch size");
  t->add_option("--ngram-sizes", train.ngram_sizes, "Comma-separated n-gram branch sizes");
  t->add_option("--dprime", train.dprime, "Output dimension D' of each n-gram branch");
  t->add_option("--circular", train.circular, "Wrap n-gram windows around the view sequence")->default_str("false");
  t->add_option("--post-conv-relu", train.post_conv_relu, "Apply ReLU after the n-gram convolution")->default_str("true");
  t->add_option("--aggregation", train.aggregation, "attention or max_pool");
  t->add_option("--seed", train.seed, "Seed for initialization and shuffling");

  EmbedFlags embed;
  auto* e = app.add_subcommand("embed", "Write 512-d descriptors for a manifest split");
  e->add_option("--checkpoint", embed.checkpoint, "Trained checkpoint")->required();
  e->add_option("--manifest", embed.manifest, "Dataset manifest")->required();
  e->add_option("--split", embed.split, "Split to embed (all: every record)");
  e->add_option("--out", embed.out, "Descriptor file path")->required();

  EvaluateFlags eval;
  auto* v = app.add_subcommand("evaluate", "Retrieval metrics for query descriptors against a gallery");
  v->add_option("--manifest", eval.manifest, "Manifest providing class labels")->required();
  v->add_option("--query", eval.query, "Query descriptor file")->required();
  v->add_option("--gallery", eval.gallery, "Gallery descriptor file (default: the query file)");
  v->add_option("--similarity", eval.similarity, "cosine or euclidean");
  v->add_option("--f1-cutoff", eval.f1_cutoff, "Rank cutoff for the F-measure");
  v->add_option("--ndcg-cutoff", eval.ndcg_cutoff, "Rank cutoff for NDCG (0: full list)");
  v->add_option("--normalize", eval.normalize, "L2-normalize descriptors before ranking")->default_str("false");
  v->add_option("--relevance", eval.relevance, "binary or graded");
  v->add_option("--json", eval.json, "Report path (default: standard output)");
  v->add_option("--pr-csv", eval.pr_csv, "Optional per-query precision-recall points");

  GradcheckFlags grad;
  auto* g = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  g->add_option("--step", grad.step, "Central difference step");
  g->add_option("--branches", grad.branches, "Branch sets, comma-separated; sizes within a set joined by '+'");
  g->add_option("--views", grad.views, "Views |V| of the probe input");
  g->add_option("--dim", grad.dim, "Feature dimension D");
  g->add_option("--dprime", grad.dprime, "Branch output dimension D'");
  g->add_option("--classes", grad.classes, "Class count C");
  g->add_option("--seed", grad.seed, "Seed for input and parameters");
  g->add_option("--threshold", grad.threshold, "Maximum accepted relative error");
  g->add_option("--break-adjoint", grad.break_adjoint, "Test hook: corrupt one adjoint (relu, softmax, layer_norm, linear)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out, err);
    if (t->parsed()) return cmd_train(train, out, err);
    if (e->parsed()) return cmd_embed(embed, out, err);
    if (v->parsed()) return cmd_evaluate(eval, out, err);
    if (g->parsed()) return cmd_gradcheck(grad, out, err);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex);
  }
  return kConfigError;
}

}  // namespace vnn::cli
