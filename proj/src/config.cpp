#include "sepformer/config.hpp"

#include <set>
#include <string>

namespace sepformer {

namespace {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, const char* block) : j_(j), block_(block) {
    if (!j.is_object()) throw std::invalid_argument(std::string(block) + " config must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (auto it = j_.find(key); it != j_.end()) out = it->template get<V>();
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw std::invalid_argument(std::string("unknown key '") + k + "' in " + block_ + " config");
    }
  }

 private:
  const json& j_;
  const char* block_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"channels", c.channels},
          {"heads", c.heads},
          {"deform_points", c.deform_points},
          {"encoder_layers", c.encoder_layers},
          {"coarse_layers", c.coarse_layers},
          {"fine_layers", c.fine_layers},
          {"k_row", c.k_row},
          {"k_col", c.k_col},
          {"points", c.points},
          {"tau_row", c.tau_row},
          {"tau_col", c.tau_col},
          {"strides", c.strides},
          {"backbone_widths", c.backbone_widths},
          {"decoder_stages", std::string(decoder_stages_name(c.decoder_stages))},
          {"proposal_base_scale", c.proposal_base_scale},
          {"ffn_multiplier", c.ffn_multiplier},
          {"min_line_extent", c.min_line_extent},
          {"detach_references", c.detach_references},
          {"class_prior", c.class_prior},
          {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  Reader r(j, "model");
  r.get("channels", c.channels);
  r.get("heads", c.heads);
  r.get("deform_points", c.deform_points);
  r.get("encoder_layers", c.encoder_layers);
  r.get("coarse_layers", c.coarse_layers);
  r.get("fine_layers", c.fine_layers);
  r.get("k_row", c.k_row);
  r.get("k_col", c.k_col);
  r.get("points", c.points);
  r.get("tau_row", c.tau_row);
  r.get("tau_col", c.tau_col);
  r.get("strides", c.strides);
  r.get("backbone_widths", c.backbone_widths);
  std::string stages(decoder_stages_name(c.decoder_stages));
  r.get("decoder_stages", stages);
  c.decoder_stages = parse_decoder_stages(stages);
  r.get("proposal_base_scale", c.proposal_base_scale);
  r.get("ffn_multiplier", c.ffn_multiplier);
  r.get("min_line_extent", c.min_line_extent);
  r.get("detach_references", c.detach_references);
  r.get("class_prior", c.class_prior);
  r.get("init_seed", c.init_seed);
  r.finish();
  c.validate();
  return c;
}

json to_json(const LossConfig& c) {
  return {{"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lambda3", c.lambda3},
          {"lambda4", c.lambda4},
          {"angle_loss_enabled", c.angle_loss_enabled},
          {"short_penalty_factor", c.short_penalty_factor},
          {"classification_scope",
           c.classification_scope == ClassificationScope::AllQueries ? "all-queries" : "matched-only"},
          {"deep_supervision", c.deep_supervision}};
}

LossConfig loss_config_from_json(const json& j) {
  LossConfig c;
  Reader r(j, "loss");
  r.get("lambda1", c.lambda1);
  r.get("lambda2", c.lambda2);
  r.get("lambda3", c.lambda3);
  r.get("lambda4", c.lambda4);
  r.get("angle_loss_enabled", c.angle_loss_enabled);
  r.get("short_penalty_factor", c.short_penalty_factor);
  std::string scope = c.classification_scope == ClassificationScope::AllQueries ? "all-queries" : "matched-only";
  r.get("classification_scope", scope);
  if (scope == "all-queries") {
    c.classification_scope = ClassificationScope::AllQueries;
  } else if (scope == "matched-only") {
    c.classification_scope = ClassificationScope::MatchedOnly;
  } else {
    throw std::invalid_argument("unknown classification_scope '" + scope + "'");
  }
  r.get("deep_supervision", c.deep_supervision);
  r.finish();
  c.validate();
  return c;
}

json to_json(const MatchConfig& c) {
  return {{"lambda_coord", c.lambda_coord},
          {"lambda_cls", c.lambda_cls},
          {"class_term_sign", c.class_term_sign == ClassTermSign::PaperLiteral ? "paper-literal" : "standard-negative"},
          {"use_line", c.use_line},
          {"use_strip", c.use_strip}};
}

MatchConfig match_config_from_json(const json& j) {
  MatchConfig c;
  Reader r(j, "match");
  r.get("lambda_coord", c.lambda_coord);
  r.get("lambda_cls", c.lambda_cls);
  std::string sign = c.class_term_sign == ClassTermSign::PaperLiteral ? "paper-literal" : "standard-negative";
  r.get("class_term_sign", sign);
  if (sign == "paper-literal") {
    c.class_term_sign = ClassTermSign::PaperLiteral;
  } else if (sign == "standard-negative") {
    c.class_term_sign = ClassTermSign::StandardNegative;
  } else {
    throw std::invalid_argument("unknown class_term_sign '" + sign + "'");
  }
  r.get("use_line", c.use_line);
  r.get("use_strip", c.use_strip);
  r.finish();
  c.validate();
  return c;
}

json to_json(const GeometryConfig& c) {
  return {{"points", c.points}, {"proposal_base_scale", c.proposal_base_scale}, {"strides", c.strides}};
}

GeometryConfig geometry_config_from_json(const json& j) {
  GeometryConfig c;
  Reader r(j, "geometry");
  r.get("points", c.points);
  r.get("proposal_base_scale", c.proposal_base_scale);
  r.get("strides", c.strides);
  r.finish();
  c.validate();
  return c;
}

}  // namespace sepformer
