#include "pcnet/io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "pcnet/numeric.hpp"

namespace pcnet {

using nlohmann::json;

std::string encode_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double decode_double(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (!j.is_string()) throw Error("checkpoint: expected a hex-float string, got " + j.dump());
  const std::string s = j.get<std::string>();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw Error("checkpoint: malformed float '" + s + "'");
  return v;
}

namespace {

json encode_vector(std::span<const double> v) {
  json out = json::array();
  for (double x : v) out.push_back(encode_double(x));
  return out;
}

std::vector<double> decode_vector(const json& j) {
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& x : j) out.push_back(decode_double(x));
  return out;
}

json leaf_to_json(const LeafParams& p) {
  return {{"gate_logit", encode_double(p.gate_logit)},
          {"weight_logits", encode_vector(p.weight_logits)},
          {"loc", encode_double(p.loc)},
          {"log_scale", encode_double(p.log_scale)},
          {"dof_raw", encode_double(p.dof_raw)}};
}

LeafParams leaf_from_json(const json& j) {
  LeafParams p;
  p.gate_logit = decode_double(j.at("gate_logit"));
  const auto w = decode_vector(j.at("weight_logits"));
  if (w.size() != kNumLeafFamilies) throw Error("checkpoint: leaf needs 3 weight logits");
  std::copy(w.begin(), w.end(), p.weight_logits.begin());
  p.loc = decode_double(j.at("loc"));
  p.log_scale = decode_double(j.at("log_scale"));
  p.dof_raw = decode_double(j.at("dof_raw"));
  return p;
}

json toylm_to_json(const ToyLmSpec& s) {
  const ToyLmConfig& c = s.config;
  json tags = json::array();
  for (bool t : s.hallucination_tag) tags.push_back(t ? 1 : 0);
  return {{"config",
           {{"num_anchors", c.num_anchors},
            {"d_llm", c.d_llm},
            {"anchor_scale", encode_double(c.anchor_scale)},
            {"displacement", encode_double(c.displacement)},
            {"recurrence_gain", encode_double(c.recurrence_gain)},
            {"embedding_noise", encode_double(c.embedding_noise)},
            {"logit_gain", encode_double(c.logit_gain)},
            {"shadow_logit_gain", encode_double(c.shadow_logit_gain)},
            {"drift_logit_gain", encode_double(c.drift_logit_gain)},
            {"seed", c.seed}}},
          {"vocab_size", s.vocab_size},
          {"d_llm", s.d_llm},
          {"embeddings", encode_vector(s.embeddings)},
          {"recurrence", encode_vector(s.recurrence)},
          {"output", encode_vector(s.output)},
          {"hallucination_tag", tags},
          {"successor", s.successor}};
}

ToyLmSpec toylm_from_json(const json& j) {
  ToyLmSpec s;
  const json& c = j.at("config");
  s.config.num_anchors = c.at("num_anchors").get<std::size_t>();
  s.config.d_llm = c.at("d_llm").get<std::size_t>();
  s.config.anchor_scale = decode_double(c.at("anchor_scale"));
  s.config.displacement = decode_double(c.at("displacement"));
  s.config.recurrence_gain = decode_double(c.at("recurrence_gain"));
  s.config.embedding_noise = decode_double(c.at("embedding_noise"));
  s.config.logit_gain = decode_double(c.at("logit_gain"));
  s.config.shadow_logit_gain = decode_double(c.at("shadow_logit_gain"));
  s.config.drift_logit_gain = decode_double(c.at("drift_logit_gain"));
  s.config.seed = c.at("seed").get<std::uint64_t>();
  s.vocab_size = j.at("vocab_size").get<std::size_t>();
  s.d_llm = j.at("d_llm").get<std::size_t>();
  s.embeddings = decode_vector(j.at("embeddings"));
  s.recurrence = decode_vector(j.at("recurrence"));
  s.output = decode_vector(j.at("output"));
  for (const auto& t : j.at("hallucination_tag")) s.hallucination_tag.push_back(t.get<int>() != 0);
  s.successor = j.at("successor").get<std::vector<Token>>();
  return s;
}

}  // namespace

json checkpoint_to_json(const Checkpoint& ckpt) {
  const CircuitGraph& c = ckpt.model.circuit;
  json nodes = json::array();
  for (std::size_t id = 0; id < c.nodes.size(); ++id) {
    const Node& n = c.nodes[id];
    json rec = {{"id", id}, {"kind", to_string(n.kind)}};
    switch (n.kind) {
      case NodeKind::kLeaf:
        rec["dim"] = n.dim;
        rec["params"] = leaf_to_json(n.leaf);
        break;
      case NodeKind::kSum:
        rec["children"] = n.children;
        rec["log_weights"] = encode_vector(n.log_weights);
        break;
      case NodeKind::kProduct:
        rec["children"] = n.children;
        break;
    }
    nodes.push_back(std::move(rec));
  }
  const Bottleneck& b = ckpt.model.bottleneck;
  json out = {{"format", kCheckpointFormat},
              {"num_dims", c.num_dims},
              {"depth", c.depth},
              {"branching", c.branching},
              {"seed", c.seed},
              {"root", c.root},
              {"nodes", std::move(nodes)},
              {"bottleneck",
               {{"input_dim", b.input_dim},
                {"hidden_dim", b.hidden_dim},
                {"output_dim", b.output_dim},
                {"w1", encode_vector(b.w1)},
                {"b1", encode_vector(b.b1)},
                {"w2", encode_vector(b.w2)},
                {"b2", encode_vector(b.b2)}}}};
  if (ckpt.toylm) out["toylm"] = toylm_to_json(*ckpt.toylm);
  return out;
}

Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", std::string()) != kCheckpointFormat)
    throw Error("checkpoint: unsupported format (expected " + std::string(kCheckpointFormat) + ")");
  Checkpoint ckpt;
  try {
    CircuitGraph& c = ckpt.model.circuit;
    c.num_dims = j.at("num_dims").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.branching = j.at("branching").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& rec : j.at("nodes")) {
      Node n;
      const std::string kind = rec.at("kind").get<std::string>();
      if (kind == "leaf") {
        n.kind = NodeKind::kLeaf;
        n.dim = rec.at("dim").get<std::size_t>();
        n.leaf = leaf_from_json(rec.at("params"));
      } else if (kind == "sum") {
        n.kind = NodeKind::kSum;
        n.children = rec.at("children").get<std::vector<std::size_t>>();
        n.log_weights = decode_vector(rec.at("log_weights"));
      } else if (kind == "product") {
        n.kind = NodeKind::kProduct;
        n.children = rec.at("children").get<std::vector<std::size_t>>();
      } else {
        throw Error("checkpoint: unknown node kind '" + kind + "'");
      }
      c.nodes.push_back(std::move(n));
    }
    c.root = j.contains("root") ? j.at("root").get<std::size_t>() : c.nodes.size() - 1;
    const json& jb = j.at("bottleneck");
    Bottleneck& b = ckpt.model.bottleneck;
    b.input_dim = jb.at("input_dim").get<std::size_t>();
    b.hidden_dim = jb.at("hidden_dim").get<std::size_t>();
    b.output_dim = jb.at("output_dim").get<std::size_t>();
    b.w1 = decode_vector(jb.at("w1"));
    b.b1 = decode_vector(jb.at("b1"));
    b.w2 = decode_vector(jb.at("w2"));
    b.b2 = decode_vector(jb.at("b2"));
    if (j.contains("toylm")) ckpt.toylm = toylm_from_json(j.at("toylm"));
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
  check_bottleneck(ckpt.model.bottleneck);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os << checkpoint_to_json(ckpt).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("missing checkpoint " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

json to_json(const GateDecision& d) {
  json cands = json::array();
  for (const CandidateScore& c : d.candidates)
    cands.push_back({{"token", c.token},
                     {"lm_logprob", c.lm_logprob},
                     {"candidate_nll", c.candidate_nll},
                     {"ldcd_score", c.ldcd_score}});
  return {{"step", d.step},         {"nll", d.nll},       {"beta", d.beta},
          {"intervened", d.intervened}, {"chosen_token", d.chosen}, {"candidates", std::move(cands)}};
}

json to_json(const PlantedPrompt& p) {
  return {{"kind", p.kind == PromptKind::kFactual ? "factual" : "adversarial"},
          {"prompt", p.prompt},
          {"gold", p.gold},
          {"prompt_labels", p.prompt_labels},
          {"gold_labels", p.gold_labels},
          {"reranking_case", p.reranking_case}};
}

void write_corpus_jsonl(std::ostream& os, const PlantedCorpus& corpus) {
  for (const PlantedPrompt& p : corpus.prompts) os << to_json(p).dump() << '\n';
}

}  // namespace pcnet
