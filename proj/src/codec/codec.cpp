#include "tie/codec.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <stdexcept>

namespace tie {

namespace {

std::string span_key(const Span& s) { return std::to_string(s.start) + ":" + std::to_string(s.end); }

class CellWriter {
 public:
  explicit CellWriter(GoldMatrix& gold) : gold_(gold) {}

  void set(int i, int j, int k, const std::string& owner) {
    const auto [it, inserted] = owners_.emplace(std::array<int, 3>{i, j, k}, owner);
    if (!inserted && it->second != owner) ++gold_.collisions;
    gold_(i, j, k) = 1.0;
  }

 private:
  GoldMatrix& gold_;
  std::map<std::array<int, 3>, std::string> owners_;
};

}  // namespace

GoldMatrix encode(const Instance& instance, const LabelSpace& labels) {
  const int n = static_cast<int>(instance.tokens.size());
  GoldMatrix gold(n, labels.size());
  CellWriter writer(gold);
  for (const auto& m : instance.entities) {
    const int k = labels.entity_channel(m.type);
    writer.set(m.span.start, m.span.end, k, "e|" + m.type + "|" + span_key(m.span));
  }
  for (const auto& link : annotations(instance).links) {
    const int k = labels.relation_channel(link.type);
    const std::string owner =
        "l|" + link.type + "|" + link.subject.type + "@" + span_key(link.subject.span) + "|" + link.object.type +
                              "@" + span_key(link.object.span);
    writer.set(link.subject.span.start, link.object.span.start, k, owner);
    writer.set(link.subject.span.end, link.object.span.end, k, owner);
  }
  return gold;
}

Annotations Prediction::annotations() const {
  Annotations a;
  for (const auto& e : entities) a.entities.push_back(e.mention);
  for (const auto& l : links) a.links.push_back(l.link);
  normalize(a);
  return a;
}

namespace {

void decode_argument_spans(const ScoreMatrix& s, const Mention& trigger, const std::string& role, int k,
                           double threshold, std::vector<ScoredLink>& out) {
  const int n = s.length;
  auto emit = [&](int a, int b, double score) {
    out.push_back({Link{role, trigger, Mention{"", Span{a, b}}}, score});
  };
  if (trigger.span.start == trigger.span.end) {
    // Start and end cells share one row: pair lit cells left to right.
    const int row = trigger.span.start;
    std::vector<int> lit;
    for (int j = 0; j < n; ++j)
      if (s(row, j, k) >= threshold) lit.push_back(j);
    std::size_t i = 0;
    for (; i + 1 < lit.size(); i += 2)
      emit(lit[i], lit[i + 1], std::min(s(row, lit[i], k), s(row, lit[i + 1], k)));
    if (i < lit.size()) emit(lit[i], lit[i], s(row, lit[i], k));
    return;
  }
  for (int a = 0; a < n; ++a) {
    const double head = s(trigger.span.start, a, k);
    if (head < threshold) continue;
    for (int b = a; b < n; ++b) {
      const double tail = s(trigger.span.end, b, k);
      if (tail >= threshold) emit(a, b, std::min(head, tail));
    }
  }
}

}  // namespace

Prediction decode(const ScoreMatrix& scores, const LabelSpace& labels, TaskKind task, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("decode threshold must lie in (0, 1), got " + std::to_string(threshold));
  if (scores.channels != labels.size())
    throw ShapeError("decode: score matrix has " + std::to_string(scores.channels) + " channels, label space " +
                     std::to_string(labels.size()));
  const int n = scores.length;
  Prediction p;
  for (int k = 0; k < labels.num_entity_types(); ++k)
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        if (scores(i, j, k) >= threshold)
          p.entities.push_back({Mention{labels.name(k), Span{i, j}}, scores(i, j, k)});

  for (int k = labels.num_entity_types(); k < labels.size(); ++k) {
    const std::string& type = labels.name(k);
    if (task == TaskKind::ee) {
      for (const auto& trig : p.entities) decode_argument_spans(scores, trig.mention, type, k, threshold, p.links);
      continue;
    }
    for (const auto& subj : p.entities) {
      if (task == TaskKind::absa && subj.mention.type != "Expression") continue;
      for (const auto& obj : p.entities) {
        if (task == TaskKind::absa && obj.mention.type != "Aspect") continue;
        const double hh = scores(subj.mention.span.start, obj.mention.span.start, k);
        const double tt = scores(subj.mention.span.end, obj.mention.span.end, k);
        if (hh >= threshold && tt >= threshold)
          p.links.push_back({Link{type, subj.mention, obj.mention}, std::min(hh, tt)});
      }
    }
  }
  return p;
}

nlohmann::json prediction_to_json(const std::vector<std::string>& tokens, const Prediction& prediction) {
  using nlohmann::json;
  json j;
  j["tokens"] = tokens;
  j["entities"] = json::array();
  std::map<Mention, int> index;
  for (const auto& e : prediction.entities) {
    index.emplace(e.mention, static_cast<int>(j["entities"].size()));
    j["entities"].push_back({{"type", e.mention.type},
                             {"start", e.mention.span.start},
                             {"end", e.mention.span.end},
                             {"score", e.score}});
  }
  j["links"] = json::array();
  for (const auto& l : prediction.links) {
    json obj;
    if (l.link.object.type.empty())
      obj = {{"start", l.link.object.span.start}, {"end", l.link.object.span.end}};
    else
      obj = index.at(l.link.object);
    j["links"].push_back(
        {{"type", l.link.type}, {"subject", index.at(l.link.subject)}, {"object", obj}, {"score", l.score}});
  }
  return j;
}

}  // namespace tie
