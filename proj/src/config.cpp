#include "pmx/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace pmx {

using Json = nlohmann::ordered_json;

void ExperimentConfig::validate() const {
  if (preset != "paper" && preset != "toy")
    throw std::runtime_error("config: unknown preset '" + preset + "'");
  if (dataset.kind != "synth" && dataset.kind != "flat" && dataset.kind != "sysu_like" &&
      dataset.kind != "regdb_like")
    throw std::runtime_error("config: unknown dataset.kind '" + dataset.kind + "'");
  if (dataset.kind == "synth") {
    dataset.train.validate();
    dataset.test.validate();
    if (dataset.train.identities != dataset.test.identities)
      throw std::runtime_error("config: synth train/test identity counts must match");
  }
  losses.validate();
  mix.validate();
  mu.validate();
  bank.validate();
  augment.validate();
  pk.validate();
  eval.validate();
  if (total_epochs < 1) throw std::runtime_error("config: total_epochs must be >= 1");
  if (mu.total_epochs < total_epochs - 1)
    throw std::runtime_error("config: mu.total_epochs must cover the training epochs");
  if (steps_per_epoch < 0 || eval_every < 0 || checkpoint_every < 0)
    throw std::runtime_error("config: negative cadence");
  if (optimizer.base_lr <= 0) throw std::runtime_error("config: base_lr must be positive");
}

// ---------------------------------------------------------------------------
// JSON projection
// ---------------------------------------------------------------------------

namespace {

Json synth_to_json(const SynthSpec& s) {
  return Json{{"identities", s.identities}, {"rgb_per_id", s.rgb_per_id},
              {"ir_per_id", s.ir_per_id},   {"height", s.height},
              {"width", s.width},           {"noise", s.noise}};
}

SynthSpec synth_from_json(const Json& j, int split) {
  SynthSpec s;
  s.identities = j.at("identities").get<int>();
  s.rgb_per_id = j.at("rgb_per_id").get<int>();
  s.ir_per_id = j.at("ir_per_id").get<int>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.noise = j.at("noise").get<real>();
  s.split = split;
  return s;
}

Json build_json(const ExperimentConfig& c) {
  Json stages = Json::array();
  for (const auto& s : c.model.trunk.stages)
    stages.push_back(Json::array({s.channels, s.stride, s.blocks}));

  return Json{
      {"preset", c.preset},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"root", c.dataset.root},
        {"seed", c.dataset.seed},
        {"train", synth_to_json(c.dataset.train)},
        {"test", synth_to_json(c.dataset.test)}}},
      {"model",
       {{"part_count", c.model.part_count},
        {"feature_dim", c.model.feature_dim},
        {"class_count", c.model.class_count},
        {"input_height", c.model.input_height},
        {"input_width", c.model.input_width},
        {"trunk",
         {{"stem_channels", c.model.trunk.stem_channels},
          {"stages", stages},
          {"attention_bottleneck", c.model.trunk.attention_bottleneck}}}}},
      {"losses",
       {{"lambda1", c.losses.lambda1},
        {"lambda2", c.losses.lambda2},
        {"lambda3", c.losses.lambda3},
        {"triplet_margin", c.losses.triplet_margin},
        {"mix_ratio", c.losses.mix_ratio}}},
      {"mix",
       {{"patch_height", c.mix.patch_height},
        {"patch_width", c.mix.patch_width},
        {"ratio_p", c.mix.ratio_p}}},
      {"mu",
       {{"max_value", c.mu.max_value},
        {"ramp_epochs", c.mu.ramp_epochs},
        {"total_epochs", c.mu.total_epochs}}},
      {"bank", {{"alpha", c.bank.alpha}, {"start_epoch", c.bank.start_epoch}}},
      {"optimizer",
       {{"momentum", c.optimizer.momentum},
        {"weight_decay", c.optimizer.weight_decay},
        {"base_lr", c.optimizer.base_lr}}},
      {"augment",
       {{"target_height", c.augment.target_height},
        {"target_width", c.augment.target_width},
        {"hflip_prob", c.augment.hflip_prob},
        {"channel_erase_prob", c.augment.channel_erase_prob}}},
      {"pk",
       {{"identities_per_batch", c.pk.identities_per_batch},
        {"images_per_identity_per_modality", c.pk.images_per_identity_per_modality}}},
      {"eval",
       {{"query_modality", modality_name(c.eval.query_modality)},
        {"gallery_modality", modality_name(c.eval.gallery_modality)},
        {"shots", c.eval.shots == Shots::SINGLE ? "single" : "multi"},
        {"multi_shot_n", c.eval.multi_shot_n},
        {"gallery_cameras", c.eval.gallery_cameras},
        {"trials", c.eval.trials},
        {"seed", c.eval.seed}}},
      {"enable",
       {{"parts", c.enable.parts},
        {"part_align", c.enable.part_align},
        {"c2c", c.enable.c2c},
        {"patchmix", c.enable.patchmix},
        {"pmml", c.enable.pmml}}},
      {"total_epochs", c.total_epochs},
      {"steps_per_epoch", c.steps_per_epoch},
      {"eval_every", c.eval_every},
      {"checkpoint_every", c.checkpoint_every},
      {"seed", c.seed},
      {"run_dir", c.run_dir},
      {"part_align_weight", c.part_align_weight},
      {"pmml_weight", c.pmml_weight},
  };
}

ExperimentConfig config_from(const Json& j) {
  ExperimentConfig c;
  c.preset = j.at("preset").get<std::string>();
  const Json& d = j.at("dataset");
  c.dataset.kind = d.at("kind").get<std::string>();
  c.dataset.root = d.at("root").get<std::string>();
  c.dataset.seed = d.at("seed").get<std::uint64_t>();
  c.dataset.train = synth_from_json(d.at("train"), 0);
  c.dataset.test = synth_from_json(d.at("test"), 1);

  const Json& m = j.at("model");
  c.model.part_count = m.at("part_count").get<int>();
  c.model.feature_dim = m.at("feature_dim").get<int>();
  c.model.class_count = m.at("class_count").get<int>();
  c.model.input_height = m.at("input_height").get<int>();
  c.model.input_width = m.at("input_width").get<int>();
  const Json& t = m.at("trunk");
  c.model.trunk.stem_channels = t.at("stem_channels").get<int>();
  c.model.trunk.attention_bottleneck = t.at("attention_bottleneck").get<int>();
  c.model.trunk.stages.clear();
  for (const auto& s : t.at("stages")) {
    if (!s.is_array() || s.size() != 3)
      throw std::runtime_error("config: model.trunk.stages entries are [channels,stride,blocks]");
    c.model.trunk.stages.push_back({s[0].get<int>(), s[1].get<int>(), s[2].get<int>()});
  }

  const Json& l = j.at("losses");
  c.losses.lambda1 = l.at("lambda1").get<real>();
  c.losses.lambda2 = l.at("lambda2").get<real>();
  c.losses.lambda3 = l.at("lambda3").get<real>();
  c.losses.triplet_margin = l.at("triplet_margin").get<real>();
  c.losses.mix_ratio = l.at("mix_ratio").get<real>();

  const Json& mx = j.at("mix");
  c.mix.patch_height = mx.at("patch_height").get<int>();
  c.mix.patch_width = mx.at("patch_width").get<int>();
  c.mix.ratio_p = mx.at("ratio_p").get<real>();

  const Json& mu = j.at("mu");
  c.mu.max_value = mu.at("max_value").get<real>();
  c.mu.ramp_epochs = mu.at("ramp_epochs").get<int>();
  c.mu.total_epochs = mu.at("total_epochs").get<int>();

  c.bank.alpha = j.at("bank").at("alpha").get<real>();
  c.bank.start_epoch = j.at("bank").at("start_epoch").get<int>();

  const Json& o = j.at("optimizer");
  c.optimizer.momentum = o.at("momentum").get<real>();
  c.optimizer.weight_decay = o.at("weight_decay").get<real>();
  c.optimizer.base_lr = o.at("base_lr").get<real>();

  const Json& a = j.at("augment");
  c.augment.target_height = a.at("target_height").get<int>();
  c.augment.target_width = a.at("target_width").get<int>();
  c.augment.hflip_prob = a.at("hflip_prob").get<real>();
  c.augment.channel_erase_prob = a.at("channel_erase_prob").get<real>();

  c.pk.identities_per_batch = j.at("pk").at("identities_per_batch").get<int>();
  c.pk.images_per_identity_per_modality =
      j.at("pk").at("images_per_identity_per_modality").get<int>();

  const Json& e = j.at("eval");
  c.eval.query_modality = modality_from_name(e.at("query_modality").get<std::string>());
  c.eval.gallery_modality = modality_from_name(e.at("gallery_modality").get<std::string>());
  const std::string shots = e.at("shots").get<std::string>();
  if (shots != "single" && shots != "multi")
    throw std::runtime_error("config: eval.shots must be 'single' or 'multi'");
  c.eval.shots = shots == "single" ? Shots::SINGLE : Shots::MULTI;
  c.eval.multi_shot_n = e.at("multi_shot_n").get<int>();
  c.eval.gallery_cameras = e.at("gallery_cameras").get<std::vector<int>>();
  c.eval.trials = e.at("trials").get<int>();
  c.eval.seed = e.at("seed").get<std::uint64_t>();

  const Json& en = j.at("enable");
  c.enable.parts = en.at("parts").get<bool>();
  c.enable.part_align = en.at("part_align").get<bool>();
  c.enable.c2c = en.at("c2c").get<bool>();
  c.enable.patchmix = en.at("patchmix").get<bool>();
  c.enable.pmml = en.at("pmml").get<bool>();

  c.total_epochs = j.at("total_epochs").get<int>();
  c.steps_per_epoch = j.at("steps_per_epoch").get<int>();
  c.eval_every = j.at("eval_every").get<int>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.run_dir = j.at("run_dir").get<std::string>();
  c.part_align_weight = j.at("part_align_weight").get<real>();
  c.pmml_weight = j.at("pmml_weight").get<real>();
  return c;
}

void merge_into(Json& base, const Json& patch, const std::string& path,
                std::vector<std::string>& unknown) {
  for (const auto& [key, value] : patch.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) {
      unknown.push_back(here);
      continue;
    }
    Json& slot = base[key];
    if (slot.is_object() && value.is_object()) {
      merge_into(slot, value, here, unknown);
    } else if (slot.is_object() || value.is_object()) {
      throw std::runtime_error("config: type mismatch at '" + here + "'");
    } else if ((slot.is_number() && value.is_number()) ||
               (slot.is_boolean() && value.is_boolean()) ||
               (slot.is_string() && value.is_string()) ||
               (slot.is_array() && value.is_array())) {
      slot = value;
    } else {
      throw std::runtime_error("config: type mismatch at '" + here + "' (expected " +
                               std::string(slot.type_name()) + ")");
    }
  }
}

bool json_has_path(const Json& j, const std::string& dotted) {
  const Json* cur = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!cur->is_object() || !cur->contains(key)) return false;
    cur = &(*cur)[key];
    if (dot == std::string::npos) return true;
    start = dot + 1;
  }
}

// "a.b.c=value" applied onto the JSON view of a config.
void apply_assignment(Json& base, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::runtime_error("config: override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::parse_error&) {
    value = raw;  // bare strings are allowed unquoted
  }

  // Build a nested single-key patch and merge it for uniform checking.
  Json patch = value;
  size_t end = path.size();
  while (true) {
    const size_t dot = path.rfind('.', end - 1);
    const std::string key =
        dot == std::string::npos ? path.substr(0, end) : path.substr(dot + 1, end - dot - 1);
    patch = Json{{key, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  std::vector<std::string> unknown;
  merge_into(base, patch, "", unknown);
  if (!unknown.empty())
    throw std::runtime_error("config: unknown key '" + unknown.front() + "'");
}

// p lives in two places (the mask sampler and the Eq. 9 weighting); when a
// file or override sets only one of them, mirror it into the other.
void mirror_ratio(Json& merged, bool ratio_set, bool weight_set) {
  if (ratio_set && !weight_set)
    merged["losses"]["mix_ratio"] = merged["mix"]["ratio_p"];
  else if (weight_set && !ratio_set)
    merged["mix"]["ratio_p"] = merged["losses"]["mix_ratio"];
}

}  // namespace

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  if (name == "paper") {
    c.preset = "paper";
    c.dataset.kind = "flat";
    c.model.input_height = 384;
    c.model.input_width = 192;
    c.model.part_count = 6;
    c.model.feature_dim = 256;
    c.model.trunk.stem_channels = 32;
    c.model.trunk.stages = {{64, 2, 1}, {128, 2, 1}, {256, 2, 1}, {256, 1, 1}};
    c.model.trunk.attention_bottleneck = 16;
    c.augment.target_height = 384;
    c.augment.target_width = 192;
    c.mix.patch_height = 16;
    c.mix.patch_width = 16;
    c.total_epochs = 101;
    c.mu = MuSchedule{0.5, 50, 101};
    c.eval.seed = 1000;
    return c;
  }
  if (name == "toy") {
    c.preset = "toy";
    // The KL-sum losses scale with batch x heads (~200 terms); from-scratch
    // toy training needs them rebalanced against the mean-formed id losses
    // or the collapsed solution wins early.
    c.part_align_weight = 0.005;
    c.pmml_weight = 0.01;
    c.dataset.kind = "synth";
    c.model.input_height = 96;
    c.model.input_width = 48;
    c.model.part_count = 6;
    c.model.feature_dim = 48;
    c.model.trunk.stem_channels = 8;
    c.model.trunk.stages = {{16, 2, 1}, {32, 2, 1}, {48, 1, 0}};
    c.model.trunk.attention_bottleneck = 8;
    c.augment.target_height = 96;
    c.augment.target_width = 48;
    c.mix.patch_height = 8;
    c.mix.patch_width = 8;
    c.total_epochs = 30;
    c.mu = MuSchedule{0.5, 15, 30};
    c.eval.seed = 1000;
    return c;
  }
  throw std::runtime_error("config: unknown preset '" + name + "'");
}

ExperimentConfig parse_config(const std::string& path,
                              const std::vector<std::string>& overrides) {
  Json file = Json::object();
  std::string text;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    text = ss.str();
    if (!text.empty()) {
      try {
        file = Json::parse(text);
      } catch (const Json::parse_error& e) {
        // Byte offset -> line number for a useful message.
        size_t line = 1;
        for (size_t i = 0; i + 1 < e.byte && i < text.size(); ++i)
          if (text[i] == '\n') ++line;
        throw std::runtime_error("config: parse error in " + path + " at line " +
                                 std::to_string(line) + ": " + e.what());
      }
      if (!file.is_object()) throw std::runtime_error("config: top level must be an object");
    }
  }

  // The preset selects the base profile before any other key applies.
  std::string preset = "paper";
  if (file.contains("preset")) preset = file.at("preset").get<std::string>();
  for (const auto& ov : overrides)
    if (ov.rfind("preset=", 0) == 0) preset = ov.substr(7);

  Json merged = build_json(preset_config(preset));
  std::vector<std::string> unknown;
  merge_into(merged, file, "", unknown);
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw std::runtime_error(msg);
  }

  bool ratio_set = json_has_path(file, "mix.ratio_p");
  bool weight_set = json_has_path(file, "losses.mix_ratio");
  for (const auto& ov : overrides) {
    apply_assignment(merged, ov);
    ratio_set |= ov.rfind("mix.ratio_p=", 0) == 0;
    weight_set |= ov.rfind("losses.mix_ratio=", 0) == 0;
  }
  mirror_ratio(merged, ratio_set, weight_set);

  ExperimentConfig cfg = config_from(merged);
  cfg.validate();
  return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  Json j = build_json(cfg);
  apply_assignment(j, assignment);
  mirror_ratio(j, assignment.rfind("mix.ratio_p=", 0) == 0,
               assignment.rfind("losses.mix_ratio=", 0) == 0);
  cfg = config_from(j);
}

std::string config_to_json(const ExperimentConfig& cfg) { return build_json(cfg).dump(2); }

std::string model_config_to_json(const ModelConfig& cfg) {
  ExperimentConfig holder;
  holder.model = cfg;
  return build_json(holder)["model"].dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  Json model = Json::parse(text);
  Json full = build_json(ExperimentConfig{});
  std::vector<std::string> unknown;
  merge_into(full["model"], model, "model", unknown);
  if (!unknown.empty())
    throw std::runtime_error("checkpoint: unknown model key '" + unknown.front() + "'");
  return config_from(full).model;
}

}  // namespace pmx
