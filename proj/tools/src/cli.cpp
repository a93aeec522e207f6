#include "crossinit/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "crossinit/backend.hpp"
#include "crossinit/defaults.hpp"
#include "crossinit/diagnostics.hpp"
#include "crossinit/errors.hpp"
#include "crossinit/evaluation.hpp"
#include "crossinit/text_encoder.hpp"

#ifndef CROSSINIT_VERSION
#define CROSSINIT_VERSION "0.0.0"
#endif

namespace crossinit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  const OptimizerConfig opt;
  const RunConfig rc;
  return {
      {"backend", rc.backend},
      {"backend_options", json::object()},
      {"seed", rc.seed},
      {"output_dir", rc.output_dir.string()},
      {"run_id", rc.run_id},
      {"names", nullptr},
      {"images", json::array()},
      {"steps", opt.steps},
      {"lr", opt.learning_rate},
      {"batch", opt.batch_size},
      {"lambda", opt.lambda},
      {"init", to_string(opt.init_strategy)},
      {"fast", opt.fast},
      {"checkpoint_every", opt.checkpoint_every},
      {"init_template", std::string(defaults::kInitTemplate)},
      {"templates", defaults::training_templates()},
      {"super_tokens", defaults::super_category_tokens()},
      {"k_tokens", rc.k_tokens},
      {"concept", nullptr},
      {"prompt", nullptr},
      {"repeats", rc.repeats},
      {"position", nullptr},
      {"prompts", nullptr},
      {"n_per_prompt", rc.n_per_prompt},
      {"sample_steps", rc.sample_steps},
      {"decode", rc.decode},
      {"class_word", std::string(defaults::kClassWord)},
      {"threads", rc.threads},
      {"mode", rc.mode},
  };
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    const json defaults = default_config();
    std::vector<std::string> k;
    for (const auto& [key, _] : defaults.items()) k.push_back(key);
    return k;
  }();
  return keys;
}

void merge_config(json& base, const json& layer) {
  if (!layer.is_object()) throw InvalidConfig("config must be a JSON object");
  for (const auto& [key, value] : layer.items()) {
    if (!base.contains(key)) throw InvalidConfig("unknown config key '" + key + "'");
    base[key] = value;
  }
}

namespace {

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config key '") + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> get_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return get<T>(j, key);
}

}  // namespace

RunConfig config_from_json(const json& j, std::string command) {
  RunConfig c;
  c.command = std::move(command);
  c.backend = get<std::string>(j, "backend");
  c.backend_options = j.at("backend_options");
  if (!c.backend_options.is_object()) throw InvalidConfig("config key 'backend_options' must be an object");
  c.seed = get<std::uint64_t>(j, "seed");
  c.output_dir = get<std::string>(j, "output_dir");
  c.run_id = get<std::string>(j, "run_id");
  if (c.run_id.empty() || c.run_id.find_first_of("/\\") != std::string::npos)
    throw InvalidConfig("run_id must be a non-empty file-name fragment");
  if (auto p = get_optional<std::string>(j, "names")) c.names = *p;
  for (const auto& p : get<std::vector<std::string>>(j, "images")) c.images.emplace_back(p);

  c.optimizer.steps = get<int>(j, "steps");
  c.optimizer.learning_rate = get<double>(j, "lr");
  c.optimizer.batch_size = get<int>(j, "batch");
  c.optimizer.lambda = get<double>(j, "lambda");
  c.optimizer.init_strategy = parse_init_strategy(get<std::string>(j, "init"));
  c.optimizer.fast = get<bool>(j, "fast");
  c.optimizer.checkpoint_every = get<int>(j, "checkpoint_every");
  c.optimizer.seed = c.seed;
  c.optimizer.validate();

  c.init_template = get<std::string>(j, "init_template");
  c.templates = get<std::vector<std::string>>(j, "templates");
  c.super_tokens = get<std::vector<std::string>>(j, "super_tokens");
  c.k_tokens = get<int>(j, "k_tokens");
  if (c.k_tokens < 1) throw InvalidConfig("k_tokens must be >= 1");

  if (auto p = get_optional<std::string>(j, "concept")) c.concept_path = *p;
  c.prompt = get_optional<std::string>(j, "prompt");
  c.repeats = get<int>(j, "repeats");
  if (c.repeats < 0) throw InvalidConfig("repeats must be >= 0");
  c.position = get_optional<int>(j, "position");

  if (auto p = get_optional<std::string>(j, "prompts")) c.prompts = *p;
  c.n_per_prompt = get<int>(j, "n_per_prompt");
  if (c.n_per_prompt < 1) throw InvalidConfig("n_per_prompt must be >= 1");
  c.sample_steps = get<int>(j, "sample_steps");
  if (c.sample_steps < 1) throw InvalidConfig("sample_steps must be >= 1");
  c.decode = get<bool>(j, "decode");
  c.class_word = get<std::string>(j, "class_word");
  c.threads = get<int>(j, "threads");
  if (c.threads < 1) throw InvalidConfig("threads must be >= 1");
  c.mode = get<std::string>(j, "mode");
  if (c.mode != "all") (void)parse_ablation_mode(c.mode);
  return c;
}

void check_paths(const RunConfig& c) {
  auto require_file = [](const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) throw InvalidConfig(std::string(what) + " not found: " + p.string());
  };
  if (c.names) require_file(*c.names, "name list");
  for (const auto& p : c.images) require_file(p, "image");
  if (c.concept_path) require_file(*c.concept_path, "concept file");
  if (c.prompts) require_file(*c.prompts, "prompt set");
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec || !fs::is_directory(c.output_dir))
    throw InvalidConfig("cannot create output directory " + c.output_dir.string());
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("sha256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

namespace {

struct Context {
  RunConfig config;
  json merged;
  std::ostream& out;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::vector<std::string> outputs;
  std::optional<fs::path> config_file;
};

fs::path output_path(Context& ctx, const fs::path& relative) {
  ctx.outputs.push_back(relative.generic_string());
  const fs::path p = ctx.config.output_dir / relative;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"steps", o.steps},         {"learning_rate", o.learning_rate}, {"batch_size", o.batch_size},
          {"lambda", o.lambda},       {"init", to_string(o.init_strategy)}, {"fast", o.fast},
          {"seed", o.seed},           {"checkpoint_every", o.checkpoint_every}};
}

void write_manifest(Context& ctx, const std::string& status) {
  const RunConfig& c = ctx.config;
  json inputs = json::array();
  auto add_input = [&](const std::string& role, const fs::path& p) {
    inputs.push_back({{"role", role}, {"path", p.string()}, {"sha256", file_sha256(p)}});
  };
  if (ctx.config_file) add_input("config", *ctx.config_file);
  if (c.names) add_input("names", *c.names);
  for (const auto& p : c.images) add_input("image", p);
  if (c.concept_path) add_input("concept", *c.concept_path);
  if (c.prompts) add_input("prompts", *c.prompts);

  json manifest = {
      {"version", 1},
      {"tool", "crossinit"},
      {"tool_version", CROSSINIT_VERSION},
      {"command", c.command},
      {"status", status},
      {"seed", c.seed},
      {"config", ctx.merged},
      {"optimizer", optimizer_json(c.optimizer.resolved())},
      {"inputs", inputs},
      {"outputs", ctx.outputs},
      {"wall_time_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.start).count()},
  };
  write_json(manifest, c.output_dir / (c.command == "train" ? "manifest.json" : c.command + "_manifest.json"));
}

NameList load_names(const RunConfig& c) {
  if (c.names) return NameList::load(*c.names);
  std::istringstream in{std::string(defaults::name_list_text())};
  return NameList::parse(in);
}

std::vector<Image> load_images(const RunConfig& c) {
  std::vector<Image> images;
  for (const auto& p : c.images) images.push_back(load_image(p));
  if (images.empty()) {
    spdlog::info("no --image given; using the built-in synthetic face");
    images.push_back(synthetic_face());
  }
  return images;
}

PromptSet load_prompts(const RunConfig& c) {
  return c.prompts ? PromptSet::load(*c.prompts) : PromptSet::default_set();
}

InversionSetup make_setup(const RunConfig& c) {
  InversionSetup s;
  s.images = load_images(c);
  s.names = load_names(c);
  for (const auto& t : c.templates) s.templates.push_back(PromptTemplate::parse(t));
  s.init_template = PromptTemplate::parse(c.init_template);
  s.super_tokens = c.super_tokens;
  s.k_tokens = c.k_tokens;
  return s;
}

std::string checkpoint_name(int step, CheckpointKind kind) {
  if (kind == CheckpointKind::last_finite) return "checkpoints/last_finite.json";
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoints/step_%06d.json", step);
  return buf;
}

void write_training_outputs(Context& ctx, const OptimizationResult& r, const fs::path& prefix) {
  save_concept(r.learned, output_path(ctx, prefix / "concept.json"));
  save_concept(r.v_init, output_path(ctx, prefix / "v_init.json"));
  export_trajectory(r.trajectory, output_path(ctx, prefix / (ctx.config.run_id + "_trajectory.csv")));
  export_trajectory_concatenated(r.trajectory,
                                 output_path(ctx, prefix / (ctx.config.run_id + "_trajectory_concat.csv")));
}

CheckpointFn make_checkpointer(Context& ctx, const fs::path& prefix) {
  return [&ctx, prefix](const ConceptEmbedding& c, int step, CheckpointKind kind) {
    if (kind == CheckpointKind::final) return;
    save_concept(c, output_path(ctx, prefix / checkpoint_name(step, kind)));
  };
}

void print_summary(std::ostream& out, const OptimizationResult& r) {
  const auto& last = r.trajectory.back();
  out << "steps " << r.config.steps << "  final loss " << last.losses.total << '\n';
  for (std::size_t s = 0; s < last.per_slot.size(); ++s) {
    const auto& g = last.per_slot[s];
    out << "  slot " << r.trajectory.slot_names()[s] << ": norm " << g.norm << "  norm/init "
        << g.norm_ratio_to_init << "  cos(init) " << g.cosine_to_init << '\n';
  }
}

int cmd_train(Context& ctx) {
  const RunConfig& c = ctx.config;
  const Backend backend = resolve_backend(c.backend, c.backend_options);
  const InversionSetup setup = make_setup(c);
  try {
    const OptimizationResult r = optimize(setup, c.optimizer, backend, make_checkpointer(ctx, {}));
    write_training_outputs(ctx, r, {});
    print_summary(ctx.out, r);
  } catch (const NonFiniteLoss&) {
    write_manifest(ctx, "non_finite");
    throw;
  }
  write_manifest(ctx, "ok");
  return kOk;
}

int cmd_ablate(Context& ctx) {
  const RunConfig& c = ctx.config;
  const Backend backend = resolve_backend(c.backend, c.backend_options);
  const InversionSetup setup = make_setup(c);
  std::vector<AblationMode> modes;
  if (c.mode == "all")
    modes = {AblationMode::full, AblationMode::no_ci, AblationMode::no_mean, AblationMode::no_reg};
  else
    modes = {parse_ablation_mode(c.mode)};

  std::ostringstream summary;
  summary << "mode,slot,norm,norm_ratio,cos_init,angle_rad,final_loss\n";
  for (AblationMode mode : modes) {
    const fs::path prefix = fs::path("ablation") / to_string(mode);
    std::optional<OptimizationResult> run;
    try {
      run = ablation_run(mode, setup, c.optimizer, backend, make_checkpointer(ctx, prefix));
    } catch (const NonFiniteLoss&) {
      write_manifest(ctx, "non_finite");
      throw;
    }
    const OptimizationResult& r = *run;
    write_training_outputs(ctx, r, prefix);
    const auto& last = r.trajectory.back();
    for (std::size_t s = 0; s < last.per_slot.size(); ++s) {
      const auto& g = last.per_slot[s];
      summary << to_string(mode) << ',' << r.trajectory.slot_names()[s] << ',' << json(g.norm).dump() << ','
              << json(g.norm_ratio_to_init).dump() << ',' << json(g.cosine_to_init).dump() << ','
              << json(angular_deviation(g.cosine_to_init)).dump() << ',' << json(last.losses.total).dump() << '\n';
    }
    ctx.out << "[" << to_string(mode) << "] ";
    print_summary(ctx.out, r);
  }
  std::ofstream f(output_path(ctx, c.run_id + "_ablation.csv"), std::ios::binary | std::ios::trunc);
  f << summary.str();
  if (!f) throw IoError("failed writing ablation summary");
  write_manifest(ctx, "ok");
  return kOk;
}

int cmd_analyze(Context& ctx) {
  const RunConfig& c = ctx.config;
  const Backend backend = resolve_backend(c.backend, c.backend_options);
  ConceptEmbedding embedding = [&] {
    if (c.concept_path) return load_concept(*c.concept_path);
    InversionSetup s;
    s.names = load_names(c);
    return initialize(InitStrategy::raw_mean, s, backend);
  }();

  const PromptTemplate tmpl = PromptTemplate::parse(c.prompt.value_or(c.init_template));
  const PromptTemplate repeat_tmpl = tmpl.has_concept_marker() ? tmpl : PromptTemplate::parse(c.init_template);

  Matrix sequence;
  int position = 0;
  if (tmpl.has_concept_marker()) {
    const SplicedPrompt sp = splice_concept(tmpl, embedding, *backend.table);
    sequence = sp.inputs;
    position = c.position.value_or(sp.slot_positions.front());
  } else {
    const TokenizedPrompt tp = tokenize_prompt(tmpl, *backend.table);
    sequence.resize(static_cast<Eigen::Index>(tp.ids.size()), backend.table->dim());
    for (std::size_t i = 0; i < tp.ids.size(); ++i)
      sequence.row(static_cast<Eigen::Index>(i)) = backend.table->rows().row(tp.ids[i]);
    // Default to the last word, just before <eos>.
    position = c.position.value_or(static_cast<int>(tp.ids.size()) - 2);
  }

  const BlockTrace trace = block_trace(sequence, *backend.text_encoder, position);
  write_block_trace_csv(trace, output_path(ctx, c.run_id + "_block_trace.csv"));
  const auto repeated = repeated_encoding_trace(embedding, *backend.text_encoder, repeat_tmpl, *backend.table,
                                                c.repeats);
  write_repeated_encoding_csv(repeated, output_path(ctx, c.run_id + "_repeated_encoding.csv"));

  ctx.out << "block trace at position " << position << ":\n";
  for (const auto& e : trace.entries)
    ctx.out << "  " << e.stage << ": norm " << e.norm << "  cos(final) " << e.cosine_to_final << '\n';
  const auto d = step_distances(repeated);
  ctx.out << "repeated encoding, " << c.repeats << " applications";
  for (double x : d) ctx.out << ' ' << x;
  ctx.out << '\n';
  write_manifest(ctx, "ok");
  return kOk;
}

ConceptEmbedding require_concept(const RunConfig& c) {
  if (!c.concept_path) throw InvalidConfig(c.command + " needs --concept");
  return load_concept(*c.concept_path);
}

int cmd_generate(Context& ctx) {
  const RunConfig& c = ctx.config;
  const Backend backend = resolve_backend(c.backend, c.backend_options);
  const ConceptEmbedding embedding = require_concept(c);
  if (c.decode && !backend.latent_decoder)
    throw AdapterMissing("backend '" + backend.name + "' provides no latent decoder");

  std::vector<std::string> prompts;
  if (c.prompt)
    prompts.push_back(*c.prompt);
  else {
    const PromptSet set = load_prompts(c);
    for (const auto& p : set.prompts()) prompts.push_back(p.text);
  }

  json entries = json::array();
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const PromptTemplate tmpl = PromptTemplate::parse(prompts[i]);
    const ConditioningVector cond = concept_conditioning(embedding, tmpl, backend);
    json latents = json::array();
    json seeds = json::array();
    for (int j = 0; j < c.n_per_prompt; ++j) {
      const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(j);
      const Vector z = sample_latent(cond, *backend.denoiser, *backend.schedule, c.sample_steps, seed);
      latents.push_back(std::vector<double>(z.data(), z.data() + z.size()));
      seeds.push_back(seed);
      if (c.decode) {
        char name[64];
        std::snprintf(name, sizeof name, "images/p%02zu_s%02d.png", i, j);
        write_png(decode_latent(z, backend.latent_decoder.get()), output_path(ctx, name));
      }
    }
    entries.push_back({{"prompt", prompts[i]}, {"seeds", seeds}, {"latents", latents}});
  }
  write_json({{"version", 1}, {"sample_steps", c.sample_steps}, {"prompts", entries}},
             output_path(ctx, c.run_id + "_latents.json"));
  ctx.out << "generated " << prompts.size() * static_cast<std::size_t>(c.n_per_prompt) << " samples for "
          << prompts.size() << " prompt(s)\n";
  write_manifest(ctx, "ok");
  return kOk;
}

int cmd_evaluate(Context& ctx) {
  const RunConfig& c = ctx.config;
  const Backend backend = resolve_backend(c.backend, c.backend_options);
  const ConceptEmbedding embedding = require_concept(c);
  const PromptSet prompts = load_prompts(c);
  const Image reference = load_images(c).front();
  EvalOptions opts;
  opts.n_per_prompt = c.n_per_prompt;
  opts.seed = c.seed;
  opts.sample_steps = c.sample_steps;
  opts.class_word = c.class_word;
  opts.threads = c.threads;
  const EvalReport report = evaluate(embedding, prompts, reference, backend, opts);
  write_report(report, output_path(ctx, "report.json"));
  ctx.out << "prompts " << prompts.size() << "  identity ";
  if (report.identity_mean)
    ctx.out << *report.identity_mean;
  else
    ctx.out << "undefined";
  ctx.out << "  prompt " << report.prompt_mean << '\n';
  write_manifest(ctx, "ok");
  return kOk;
}

struct Flags {
  std::string config;
  std::string log_level = "warn";
  std::string backend, output_dir, run_id, names, init, init_template, concept_file, prompt, prompts, class_word,
      mode;
  std::vector<std::string> images, templates;
  std::uint64_t seed = 0;
  int steps = 0, batch = 0, k_tokens = 0, checkpoint_every = 0, repeats = 0, position = 0, n_per_prompt = 0,
      sample_steps = 0, threads = 0;
  double lr = 0, lambda = 0;
  bool fast = false, decode = false;
};

template <typename T>
void overlay(json& j, const CLI::Option* opt, const char* key, const T& value) {
  if (opt->count() > 0) j[key] = value;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-initialized textual inversion toolkit", "crossinit"};
  app.set_version_flag("--version", CROSSINIT_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  for (const char* name : {"train", "analyze", "generate", "evaluate", "ablate"}) app.add_subcommand(name);
  app.get_subcommand("train")->description("learn a concept embedding from reference images");
  app.get_subcommand("analyze")->description("per-block and repeated-encoding traces of a concept");
  app.get_subcommand("generate")->description("sample latents (and images with --decode) for a concept");
  app.get_subcommand("evaluate")->description("identity and prompt similarity over a prompt set");
  app.get_subcommand("ablate")->description("train the ablation variants side by side");

  Flags f;
  auto* o_backend = app.add_option("--backend", f.backend, "toy or adapter:<name>");
  auto* o_seed = app.add_option("--seed", f.seed, "run seed");
  app.add_option("--config", f.config, "JSON config file (flags override it)");
  auto* o_out = app.add_option("--output-dir", f.output_dir, "directory for artifacts");
  auto* o_run = app.add_option("--run-id", f.run_id, "prefix for trajectory and trace files");
  auto* o_names = app.add_option("--names", f.names, "name list, one 'First Last' per line");
  auto* o_image = app.add_option("--image", f.images, "reference image (repeatable)");
  auto* o_steps = app.add_option("--steps", f.steps, "optimization steps");
  auto* o_lr = app.add_option("--lr", f.lr, "learning rate");
  auto* o_batch = app.add_option("--batch", f.batch, "batch size");
  auto* o_lambda = app.add_option("--lambda", f.lambda, "regularization weight");
  auto* o_init = app.add_option("--init", f.init, "cross|super-category|raw-mean|direct-output");
  auto* o_fast = app.add_flag("--fast", f.fast, "25 steps at learning rate 0.08");
  auto* o_itmpl = app.add_option("--init-template", f.init_template, "context for the cross initialization");
  auto* o_tmpl = app.add_option("--template", f.templates, "training template with {S*} (repeatable)");
  auto* o_prompts = app.add_option("--prompts", f.prompts, "prompt set, 'tag<TAB>prompt' per line");
  auto* o_k = app.add_option("--k-tokens", f.k_tokens, "tokens per concept");
  auto* o_ckpt = app.add_option("--checkpoint-every", f.checkpoint_every, "checkpoint interval, 0 disables");
  auto* o_concept = app.add_option("--concept", f.concept_file, "concept.json to analyze, sample or evaluate");
  auto* o_prompt = app.add_option("--prompt", f.prompt, "single prompt");
  auto* o_repeats = app.add_option("--repeats", f.repeats, "repeated encoder applications");
  auto* o_pos = app.add_option("--position", f.position, "sequence position for the block trace");
  auto* o_n = app.add_option("--num,--n-per-prompt", f.n_per_prompt, "samples per prompt");
  auto* o_ss = app.add_option("--sample-steps", f.sample_steps, "sampler steps");
  auto* o_decode = app.add_flag("--decode", f.decode, "decode latents to PNG");
  auto* o_class = app.add_option("--class-word", f.class_word, "replaces {S*} in text embeddings");
  auto* o_threads = app.add_option("--threads", f.threads, "generation worker threads");
  auto* o_mode = app.add_option("--mode", f.mode, "ablation: all|full|no_ci|no_mean|no_reg");
  app.add_option("--log-level", f.log_level, "trace|debug|info|warn|error|off");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << CROSSINIT_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("crossinit", sink);
  logger->set_pattern("[%l] %v");
  logger->set_level(spdlog::level::from_str(f.log_level));
  spdlog::set_default_logger(logger);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    json merged = default_config();
    if (!f.config.empty()) {
      std::ifstream in(f.config, std::ios::binary);
      if (!in) throw InvalidConfig("cannot open config file " + f.config);
      json file;
      try {
        in >> file;
      } catch (const json::exception& e) {
        throw InvalidConfig("config file " + f.config + ": " + e.what());
      }
      merge_config(merged, file);
    }
    overlay(merged, o_backend, "backend", f.backend);
    overlay(merged, o_seed, "seed", f.seed);
    overlay(merged, o_out, "output_dir", f.output_dir);
    overlay(merged, o_run, "run_id", f.run_id);
    overlay(merged, o_names, "names", f.names);
    overlay(merged, o_image, "images", f.images);
    overlay(merged, o_steps, "steps", f.steps);
    overlay(merged, o_lr, "lr", f.lr);
    overlay(merged, o_batch, "batch", f.batch);
    overlay(merged, o_lambda, "lambda", f.lambda);
    overlay(merged, o_init, "init", f.init);
    overlay(merged, o_fast, "fast", f.fast);
    overlay(merged, o_itmpl, "init_template", f.init_template);
    overlay(merged, o_tmpl, "templates", f.templates);
    overlay(merged, o_prompts, "prompts", f.prompts);
    overlay(merged, o_k, "k_tokens", f.k_tokens);
    overlay(merged, o_ckpt, "checkpoint_every", f.checkpoint_every);
    overlay(merged, o_concept, "concept", f.concept_file);
    overlay(merged, o_prompt, "prompt", f.prompt);
    overlay(merged, o_repeats, "repeats", f.repeats);
    overlay(merged, o_pos, "position", f.position);
    overlay(merged, o_n, "n_per_prompt", f.n_per_prompt);
    overlay(merged, o_ss, "sample_steps", f.sample_steps);
    overlay(merged, o_decode, "decode", f.decode);
    overlay(merged, o_class, "class_word", f.class_word);
    overlay(merged, o_threads, "threads", f.threads);
    overlay(merged, o_mode, "mode", f.mode);

    Context ctx{config_from_json(merged, command), merged, out, std::chrono::steady_clock::now(), {}, {}};
    if (!f.config.empty()) ctx.config_file = fs::path(f.config);
    check_paths(ctx.config);
    if (command == "train") return cmd_train(ctx);
    if (command == "ablate") return cmd_ablate(ctx);
    if (command == "analyze") return cmd_analyze(ctx);
    if (command == "generate") return cmd_generate(ctx);
    return cmd_evaluate(ctx);
  } catch (const NonFiniteLoss& e) {
    err << "error: " << e.what() << " (last finite checkpoint written)\n";
    return kNonFinite;
  } catch (const AdapterMissing& e) {
    err << "error: " << e.what() << '\n';
    return kAdapterMissing;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace crossinit::cli
