#include "critloop/serialize.hpp"

namespace critloop {

const json& field(const json& j, const char* name) {
  if (!j.is_object()) throw SchemaError(std::string("expected an object holding '") + name + "'");
  auto it = j.find(name);
  if (it == j.end()) throw SchemaError(std::string("missing field '") + name + "'");
  return *it;
}

std::string str_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_string()) throw SchemaError(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

long long int_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number_integer()) throw SchemaError(std::string("field '") + name + "' must be an integer");
  return v.get<long long>();
}

double num_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number()) throw SchemaError(std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

bool bool_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_boolean()) throw SchemaError(std::string("field '") + name + "' must be a boolean");
  return v.get<bool>();
}

json make_record(json body) {
  body["schema_version"] = kSchemaVersion;
  return body;
}

void check_record(const json& j) {
  if (!j.is_object()) throw SchemaError("record is not a JSON object");
  if (int_field(j, "schema_version") != kSchemaVersion)
    throw SchemaError("unsupported schema_version " + field(j, "schema_version").dump());
}

std::string dump_line(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::strict); }

json parse_line(const std::string& line) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("invalid JSON: ") + e.what());
  }
}

json to_json(const Query& q) {
  json j{{"id", q.id}, {"text", q.text}, {"gold_answer", q.gold_answer}, {"source", to_string(q.source)}};
  j["difficulty"] = q.difficulty ? json(*q.difficulty) : json(nullptr);
  return j;
}

Query query_from_json(const json& j) {
  Query q;
  q.id = str_field(j, "id");
  q.text = str_field(j, "text");
  q.gold_answer = str_field(j, "gold_answer");
  try {
    q.source = j.contains("source") ? parse_query_source(str_field(j, "source")) : QuerySource::custom;
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  if (j.contains("difficulty") && !j.at("difficulty").is_null())
    q.difficulty = static_cast<int>(int_field(j, "difficulty"));
  try {
    q.validate();
  } catch (const InvariantError& e) {
    throw SchemaError(e.what());
  }
  return q;
}

json to_json(const ReasoningPath& p) {
  json steps = json::array();
  for (const auto& s : p.steps()) steps.push_back({{"index", s.index}, {"text", s.text}});
  json j{{"steps", steps}, {"provenance", to_string(p.provenance())}};
  j["final_answer"] = p.final_answer() ? json(p.final_answer()->raw()) : json(nullptr);
  const auto& g = p.gen_params();
  j["gen_params"] = {{"temperature", g.temperature}, {"seed", g.seed}, {"backend_id", g.backend_id}};
  return j;
}

ReasoningPath path_from_json(const json& j) {
  const json& steps = field(j, "steps");
  if (!steps.is_array()) throw SchemaError("field 'steps' must be an array");
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (int_field(steps[i], "index") != static_cast<long long>(i))
      throw SchemaError("step indices must be contiguous from 0");
    texts.push_back(str_field(steps[i], "text"));
  }
  Provenance prov;
  try {
    prov = parse_provenance(str_field(j, "provenance"));
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  GenParams g;
  if (j.contains("gen_params")) {
    const json& gp = j.at("gen_params");
    g.temperature = num_field(gp, "temperature");
    const json& seed = field(gp, "seed");
    if (!seed.is_number_integer()) throw SchemaError("field 'seed' must be an integer");
    g.seed = seed.get<std::uint64_t>();
    g.backend_id = str_field(gp, "backend_id");
  }
  ReasoningPath p;
  try {
    p = ReasoningPath::from_steps(std::move(texts), prov, std::move(g));
  } catch (const InvariantError& e) {
    throw SchemaError(e.what());
  }
  const json& fa = field(j, "final_answer");
  std::optional<std::string> stored = fa.is_null() ? std::nullopt : std::optional<std::string>(fa.get<std::string>());
  std::optional<std::string> derived = p.final_answer() ? std::optional<std::string>(p.final_answer()->raw()) : std::nullopt;
  if (stored != derived) throw SchemaError("final_answer does not match the answer extracted from the steps");
  return p;
}

json to_json(const Critique& c) {
  json verdicts = json::array();
  for (auto v : c.step_verdicts()) verdicts.push_back(to_string(v));
  json j{{"step_verdicts", verdicts},
         {"feedback", c.feedback()},
         {"overall_verdict", to_string(c.overall_verdict())},
         {"step_feedback", c.step_feedback()}};
  j["first_error_index"] = c.first_error_index() ? json(*c.first_error_index()) : json(nullptr);
  return j;
}

Critique critique_from_json(const json& j) {
  const json& vs = field(j, "step_verdicts");
  if (!vs.is_array()) throw SchemaError("field 'step_verdicts' must be an array");
  std::vector<StepVerdict> verdicts;
  try {
    for (const auto& v : vs) verdicts.push_back(parse_step_verdict(v.get<std::string>()));
  } catch (const std::exception& e) {
    throw SchemaError(std::string("bad step verdict: ") + e.what());
  }
  const json& fe = field(j, "first_error_index");
  std::optional<int> first = fe.is_null() ? std::nullopt : std::optional<int>(static_cast<int>(int_field(j, "first_error_index")));
  std::vector<std::string> notes;
  if (j.contains("step_feedback")) notes = j.at("step_feedback").get<std::vector<std::string>>();
  std::string overall = str_field(j, "overall_verdict");
  if (overall != (first ? "flawed" : "correct"))
    throw SchemaError("overall_verdict disagrees with first_error_index");
  try {
    return Critique::make(std::move(verdicts), first, str_field(j, "feedback"), std::move(notes));
  } catch (const InvariantError& e) {
    throw SchemaError(e.what());
  }
}

json to_json(const RefinementRecord& r) {
  return {{"query_id", r.query_id},
          {"base_path", to_json(r.base_path)},
          {"critique", to_json(r.critique)},
          {"refined_path", to_json(r.refined_path)},
          {"round_index", r.round_index}};
}

RefinementRecord refinement_from_json(const json& j) {
  RefinementRecord r;
  r.query_id = str_field(j, "query_id");
  r.base_path = path_from_json(field(j, "base_path"));
  r.critique = critique_from_json(field(j, "critique"));
  r.refined_path = path_from_json(field(j, "refined_path"));
  r.round_index = static_cast<int>(int_field(j, "round_index"));
  try {
    r.validate();
  } catch (const InvariantError& e) {
    throw SchemaError(e.what());
  }
  return r;
}

json to_json(const InteractionHistory& h) {
  json rounds = json::array();
  for (const auto& r : h.rounds) rounds.push_back({{"critique", to_json(r.critique)}, {"refinement", to_json(r.refinement)}});
  return {{"query", to_json(h.query)}, {"initial", to_json(h.initial)}, {"rounds", rounds}};
}

InteractionHistory history_from_json(const json& j) {
  InteractionHistory h;
  h.query = query_from_json(field(j, "query"));
  h.initial = path_from_json(field(j, "initial"));
  const json& rounds = field(j, "rounds");
  if (!rounds.is_array()) throw SchemaError("field 'rounds' must be an array");
  for (const auto& r : rounds)
    h.rounds.push_back(Round{critique_from_json(field(r, "critique")), path_from_json(field(r, "refinement"))});
  return h;
}

}  // namespace critloop
