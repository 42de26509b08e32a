#include "tie/synth.hpp"

#include "tie/instruction.hpp"
#include "tie/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace tie {
namespace {

using json = nlohmann::json;
using Words = std::vector<std::string>;

const Words kFirst = {"John",  "Mary",   "Ahmed", "Li",     "Sofia", "Carlos", "Anna",  "Ivan",   "Priya", "Kenji",
                      "Fatima", "Lucas", "Elena", "Omar",   "Grace", "Pedro",  "Chloe", "Yusuf",  "Hana",  "Marco",
                      "Olga",  "Samuel", "Nadia", "Tomas",  "Aisha", "Victor", "Lena",  "Diego",  "Mei",   "Felix"};
const Words kLast = {"Smith", "Garcia", "Chen", "Kowalski", "Okafor", "Sabourin", "Tanaka", "Novak",
                     "Haddad", "Jensen", "Rossi", "Silva", "Moreau", "Patel", "Weber", "Larsen"};
const Words kOrg = {"Acme",        "Globex",      "Initech",  "Vicorp",     "Hooli",        "Cyberdyne", "Soylent",
                    "Oscorp",      "Monarch",     "Aperture", "Umbrella Corp", "Stark Industries",
                    "Wayne Enterprises", "Massive Dynamic", "Pied Piper", "Dunder Mifflin", "Sterling Cooper",
                    "Tyrell Corp", "Vandelay Industries", "Bluth Company", "Wonka", "Gringotts", "Nakatomi", "Zorg"};
const Words kLoc = {"Paris",  "Berlin", "Lagos",  "Tokyo",   "Denver",    "Lima",  "Oslo",   "Cairo",
                    "Madrid", "Austin", "Seoul",  "Nairobi", "Dublin",    "Quito", "Hanoi",  "Boston",
                    "Perth",  "Vienna", "Mumbai", "Toronto", "Santiago",  "Accra", "Prague", "New York",
                    "San Diego", "Buenos Aires"};
const Words kVenue = {"restaurant", "cafe", "bistro", "diner", "bakery", "pizzeria", "tavern", "brasserie"};
const Words kDay = {"monday", "tuesday", "friday", "sunday", "the weekend"};
const Words kPeriod = {"year", "month", "spring", "winter"};

const std::string& pick(Rng& rng, const Words& words) { return words[rng.below(words.size())]; }

std::string person(Rng& rng) {
  std::string name = pick(rng, kFirst);
  if (rng.bernoulli(0.4)) name += " " + pick(rng, kLast);
  return name;
}

class Builder {
 public:
  Builder& text(std::string_view words) {
    for (auto& w : split_whitespace(words)) x_.tokens.push_back(std::move(w));
    return *this;
  }
  Span span(std::string_view words) {
    const int start = static_cast<int>(x_.tokens.size());
    text(words);
    return {start, static_cast<int>(x_.tokens.size()) - 1};
  }
  int mention(const std::string& type, std::string_view words) {
    x_.entities.push_back({type, span(words)});
    return static_cast<int>(x_.entities.size()) - 1;
  }
  void link(const std::string& type, int subject, int object) { x_.links.push_back({type, subject, object}); }
  void arg(const std::string& role, int trigger, Span span) { x_.links.push_back({role, trigger, span}); }
  Instance take() { return std::move(x_); }

 private:
  Instance x_;
};

// ---------------------------------------------------------------------------
// NER family. Venue frames appear in both sources; `venue` is the type the
// dataset gives to the venue word.

using NerFrame = void (*)(Builder&, Rng&, const std::string& venue);

const std::vector<NerFrame> kVenueFrames = {
    [](Builder& b, Rng& r, const std::string& v) {
      b.text("the").mention(v, pick(r, kVenue));
      b.text("near").mention("LOC", pick(r, kLoc));
      b.text("hired").mention("PER", person(r));
      b.text(".");
    },
    [](Builder& b, Rng& r, const std::string& v) {
      b.mention("PER", person(r));
      b.text("had dinner at the").mention(v, pick(r, kVenue));
      b.text("on").text(pick(r, kDay)).text(".");
    },
    [](Builder& b, Rng& r, const std::string& v) {
      b.text("a new").mention(v, pick(r, kVenue));
      b.text("opened in").mention("LOC", pick(r, kLoc));
      b.text(".");
    },
};

const std::vector<NerFrame> kFramesA = {
    [](Builder& b, Rng& r, const std::string&) {
      b.mention("PER", person(r));
      b.text("joined").mention("ORG", pick(r, kOrg));
      b.text("last").text(pick(r, kPeriod)).text(".");
    },
    [](Builder& b, Rng& r, const std::string&) {
      b.mention("PER", person(r));
      b.text("flew to").mention("LOC", pick(r, kLoc));
      b.text("on").text(pick(r, kDay)).text(".");
    },
    [](Builder& b, Rng& r, const std::string&) {
      b.text("reports say").mention("ORG", pick(r, kOrg));
      b.text("will expand to").mention("LOC", pick(r, kLoc));
      b.text(".");
    },
    [](Builder& b, Rng& r, const std::string&) {
      b.mention("PER", person(r));
      b.text("met").mention("PER", person(r));
      b.text("in").mention("LOC", pick(r, kLoc));
      b.text(".");
    },
};

const std::vector<NerFrame> kFramesB = {
    [](Builder& b, Rng& r, const std::string&) {
      b.text("yesterday").mention("PER", person(r));
      b.text("visited").mention("LOC", pick(r, kLoc));
      b.text("with friends .");
    },
    [](Builder& b, Rng& r, const std::string&) {
      b.text("analysts praised").mention("ORG", pick(r, kOrg));
      b.text("for strong sales .");
    },
    [](Builder& b, Rng& r, const std::string&) {
      b.mention("PER", person(r));
      b.text(", a spokesman for").mention("ORG", pick(r, kOrg));
      b.text(", spoke in").mention("LOC", pick(r, kLoc));
      b.text(".");
    },
    [](Builder& b, Rng& r, const std::string&) {
      b.mention("ORG", pick(r, kOrg));
      b.text("hired").mention("PER", person(r));
      b.text("as chief executive .");
    },
};

const std::vector<NerFrame> kFramesTarget = {
    [](Builder& b, Rng& r, const std::string&) {
      b.mention("PER", person(r));
      b.text("said").mention("ORG", pick(r, kOrg));
      b.text("is moving to").mention("LOC", pick(r, kLoc));
      b.text(".");
    },
    [](Builder& b, Rng& r, const std::string& v) {
      b.text("the").mention(v, pick(r, kVenue));
      b.text("in").mention("LOC", pick(r, kLoc));
      b.text("belongs to").mention("PER", person(r));
      b.text(".");
    },
    [](Builder& b, Rng& r, const std::string&) {
      b.mention("ORG", pick(r, kOrg));
      b.text("and").mention("ORG", pick(r, kOrg));
      b.text("signed a deal in").mention("LOC", pick(r, kLoc));
      b.text(".");
    },
    [](Builder& b, Rng& r, const std::string&) {
      b.mention("PER", person(r));
      b.text("was born in").mention("LOC", pick(r, kLoc));
      b.text(".");
    },
    [](Builder& b, Rng& r, const std::string&) {
      b.mention("PER", person(r));
      b.text("left").mention("ORG", pick(r, kOrg));
      b.text("after").text(std::to_string(2 + r.below(20))).text("years .");
    },
};

Instance ner_sentence(Rng& rng, const std::vector<NerFrame>& own, double venue_share, const std::string& venue) {
  Builder b;
  if (rng.bernoulli(venue_share))
    kVenueFrames[rng.below(kVenueFrames.size())](b, rng, venue);
  else
    own[rng.below(own.size())](b, rng, venue);
  return b.take();
}

// ---------------------------------------------------------------------------
// RE

using Frame = void (*)(Builder&, Rng&);

const std::vector<Frame> kRelationFrames = {
    [](Builder& b, Rng& r) {
      const int s = b.mention("PER", person(r));
      b.text("works for");
      const int o = b.mention("ORG", pick(r, kOrg));
      b.text(".");
      b.link("Work_For", s, o);
    },
    [](Builder& b, Rng& r) {
      const int s = b.mention("PER", person(r));
      b.text("lives in");
      const int o = b.mention("LOC", pick(r, kLoc));
      b.text(".");
      b.link("Live_In", s, o);
    },
    [](Builder& b, Rng& r) {
      const int org = b.mention("ORG", pick(r, kOrg));
      b.text(", based in");
      const int loc = b.mention("LOC", pick(r, kLoc));
      b.text(", hired");
      const int per = b.mention("PER", person(r));
      b.text(".");
      b.link("Located_In", org, loc);
      b.link("Work_For", per, org);
    },
    [](Builder& b, Rng& r) {
      const int s = b.mention("PER", person(r));
      b.text(", who lives in");
      const int o = b.mention("LOC", pick(r, kLoc));
      b.text(", met");
      b.mention("PER", person(r));
      b.text(".");
      b.link("Live_In", s, o);
    },
    [](Builder& b, Rng& r) {
      b.mention("PER", person(r));
      b.text("visited");
      b.mention("LOC", pick(r, kLoc));
      b.text("once .");
    },
    [](Builder& b, Rng& r) {
      b.text("the");
      const int org = b.mention("ORG", pick(r, kOrg));
      b.text("office in");
      const int loc = b.mention("LOC", pick(r, kLoc));
      b.text("employs");
      const int per = b.mention("PER", person(r));
      b.text(".");
      b.link("Located_In", org, loc);
      b.link("Work_For", per, org);
    },
};

// ---------------------------------------------------------------------------
// EE

const Words kActor = {"rebels", "soldiers", "the militia", "gunmen", "police", "protesters"};
const Words kObject = {"the convoy", "the embassy", "a checkpoint", "the village", "the bridge", "the base"};
const Words kCargo = {"the supplies", "medicine", "the weapons", "food aid", "the equipment"};
const Words kAttackWord = {"attacked", "bombed", "raided", "opened fire on", "shelled"};
const Words kMeetWord = {"met", "talked with", "gathered with"};
const Words kTransportWord = {"shipped", "moved", "flown", "sent"};

// "opened fire on" keeps its preposition outside the trigger.
int trigger(Builder& b, const std::string& type, const std::string& word) {
  if (word == "opened fire on") {
    const int t = b.mention(type, "opened fire");
    b.text("on");
    return t;
  }
  return b.mention(type, word);
}

const std::vector<Frame> kEventFrames = {
    [](Builder& b, Rng& r) {
      const Span attacker = b.span(pick(r, kActor));
      const int t = trigger(b, "Attack", pick(r, kAttackWord));
      const Span target = b.span(pick(r, kObject));
      b.text("in");
      const Span place = b.span(pick(r, kLoc));
      b.text(".");
      b.arg("Attacker", t, attacker);
      b.arg("Target", t, target);
      b.arg("Place", t, place);
    },
    [](Builder& b, Rng& r) {
      const Span entity = b.span(person(r));
      const int t = trigger(b, "Meet", pick(r, kMeetWord));
      b.text("officials in");
      const Span place = b.span(pick(r, kLoc));
      b.text(".");
      b.arg("Entity", t, entity);
      b.arg("Place", t, place);
    },
    [](Builder& b, Rng& r) {
      const Span cargo = b.span(pick(r, kCargo));
      b.text("was");
      const int t = trigger(b, "Transport", pick(r, kTransportWord));
      b.text("to");
      const Span dest = b.span(pick(r, kLoc));
      b.text(".");
      b.arg("Artifact", t, cargo);
      b.arg("Destination", t, dest);
    },
    [](Builder& b, Rng& r) {
      const Span attacker = b.span(pick(r, kActor));
      const int a = trigger(b, "Attack", pick(r, kAttackWord));
      const Span target = b.span(pick(r, kObject));
      b.text("while");
      const Span entity = b.span(person(r));
      const int m = trigger(b, "Meet", pick(r, kMeetWord));
      b.text("aides in");
      const Span place = b.span(pick(r, kLoc));
      b.text(".");
      b.arg("Attacker", a, attacker);
      b.arg("Target", a, target);
      b.arg("Entity", m, entity);
      b.arg("Place", m, place);
    },
    [](Builder& b, Rng& r) {
      b.text("officials said");
      const int t = trigger(b, "Attack", pick(r, kAttackWord));
      b.text("buildings were reported in");
      const Span place = b.span(pick(r, kLoc));
      b.text(".");
      b.arg("Place", t, place);
    },
};

// ---------------------------------------------------------------------------
// ABSA

const Words kAspect = {"food", "service", "staff", "pasta", "pizza", "wine list", "ambience", "prices", "dessert", "waiter"};
const std::vector<std::pair<std::string, Words>> kOpinion = {
    {"Positive", {"great", "delicious", "friendly", "cozy", "very tasty", "excellent", "fresh"}},
    {"Negative", {"awful", "rude", "too salty", "cold", "bland", "slow"}},
    {"Neutral", {"average", "okay", "nothing special", "standard"}},
};

void opinion(Builder& b, Rng& r, int aspect) {
  const auto& [polarity, words] = kOpinion[r.below(kOpinion.size())];
  const int e = b.mention("Expression", pick(r, words));
  b.link(polarity, e, aspect);
}

const std::vector<Frame> kSentimentFrames = {
    [](Builder& b, Rng& r) {
      b.text("the");
      const int a = b.mention("Aspect", pick(r, kAspect));
      b.text("was");
      opinion(b, r, a);
      b.text(".");
    },
    [](Builder& b, Rng& r) {
      const auto& [p1, w1] = kOpinion[r.below(kOpinion.size())];
      const int e1 = b.mention("Expression", pick(r, w1));
      const int a1 = b.mention("Aspect", pick(r, kAspect));
      b.text("and");
      const auto& [p2, w2] = kOpinion[r.below(kOpinion.size())];
      const int e2 = b.mention("Expression", pick(r, w2));
      const int a2 = b.mention("Aspect", pick(r, kAspect));
      b.text(".");
      b.link(p1, e1, a1);
      b.link(p2, e2, a2);
    },
    [](Builder& b, Rng& r) {
      b.text("i thought the");
      const int a1 = b.mention("Aspect", pick(r, kAspect));
      b.text("was");
      opinion(b, r, a1);
      b.text("but the");
      const int a2 = b.mention("Aspect", pick(r, kAspect));
      b.text("was");
      opinion(b, r, a2);
      b.text(".");
    },
    [](Builder& b, Rng& r) {
      b.text("we came back for the");
      b.mention("Aspect", pick(r, kAspect));
      b.text(".");
    },
};

// ---------------------------------------------------------------------------

Instance from_frames(Rng& rng, const std::vector<Frame>& frames) {
  Builder b;
  frames[rng.below(frames.size())](b, rng);
  return b.take();
}

const std::vector<std::string> kNerTemplates = {
    "extract entities of type {PER} , {ORG} and {LOC} from the sentence .",
    "find every {PER} , {ORG} or {LOC} mention .",
    "identify {PER} , {ORG} , {LOC} spans in the text .",
    "label the sentence with {PER} , {ORG} and {LOC} .",
    "which words are {PER} , {ORG} or {LOC} ?",
};
const std::vector<std::string> kRelationTemplates = {
    "extract entities {PER} , {ORG} , {LOC} and relations {Work_For} , {Live_In} , {Located_In} .",
    "find {PER} , {ORG} , {LOC} mentions linked by {Work_For} , {Live_In} or {Located_In} .",
    "list {Work_For} , {Live_In} and {Located_In} facts between {PER} , {ORG} and {LOC} .",
    "identify {PER} , {ORG} , {LOC} and the {Work_For} , {Live_In} , {Located_In} links .",
    "which {PER} , {ORG} , {LOC} pairs hold {Work_For} , {Live_In} or {Located_In} ?",
};
const std::vector<std::string> kEventTemplates = {
    "extract events {Attack} , {Meet} , {Transport} with roles {Attacker} , {Target} , {Place} , {Entity} , "
    "{Artifact} , {Destination} .",
    "find {Attack} , {Meet} or {Transport} triggers and their {Attacker} , {Target} , {Place} , {Entity} , "
    "{Artifact} , {Destination} arguments .",
    "identify {Attack} , {Meet} , {Transport} events ; roles are {Attacker} , {Target} , {Place} , {Entity} , "
    "{Artifact} , {Destination} .",
    "label triggers ( {Attack} , {Meet} , {Transport} ) and arguments ( {Attacker} , {Target} , {Place} , "
    "{Entity} , {Artifact} , {Destination} ) .",
    "which words trigger {Attack} , {Meet} or {Transport} and fill {Attacker} , {Target} , {Place} , {Entity} , "
    "{Artifact} or {Destination} ?",
};
const std::vector<std::string> kSentimentTemplates = {
    "extract {Aspect} terms , {Expression} terms and their {Positive} , {Negative} or {Neutral} sentiment .",
    "find each {Expression} and the {Aspect} it rates as {Positive} , {Negative} or {Neutral} .",
    "identify {Aspect} and {Expression} spans linked by {Positive} , {Negative} , {Neutral} .",
    "label opinions : {Expression} , {Aspect} , {Positive} , {Negative} , {Neutral} .",
    "which {Expression} describes which {Aspect} , and is it {Positive} , {Negative} or {Neutral} ?",
};

int eval_size(int size) { return std::max(20, size / 5); }

template <typename Gen>
SynthTask make_task(std::string id, TaskKind task, LabelSpace labels, std::vector<std::string> templates,
                    std::uint64_t seed, int train, int held_out, Gen gen) {
  SynthTask t;
  t.dataset.id = std::move(id);
  t.dataset.task = task;
  t.dataset.labels = std::move(labels);
  t.templates = std::move(templates);
  Rng rng(seed);
  auto fill = [&](std::vector<Instance>& split, int n) {
    for (int i = 0; i < n; ++i) {
      Instance x = gen(rng);
      x.dataset_id = t.dataset.id;
      validate(x, t.dataset.labels);
      split.push_back(std::move(x));
    }
  };
  fill(t.dataset.train, train);
  fill(t.dataset.dev, held_out);
  fill(t.dataset.test, held_out);
  return t;
}

LabelSpace ner_labels() { return LabelSpace({"PER", "ORG", "LOC"}, {}); }

SynthTask ner_source(const std::string& id, const std::vector<NerFrame>& frames, const std::string& venue,
                     int size, std::uint64_t seed) {
  return make_task(id, TaskKind::ner, ner_labels(), kNerTemplates, seed, size, eval_size(size),
                   [&](Rng& r) { return ner_sentence(r, frames, 0.4, venue); });
}

SynthTask ner_target(const std::string& id, int size, std::uint64_t seed) {
  return make_task(id, TaskKind::ner, ner_labels(), kNerTemplates, seed, std::max(8, size / 20), eval_size(size),
                   [](Rng& r) { return ner_sentence(r, kFramesTarget, 0.0, "ORG"); });
}

std::vector<NerFrame> concat(std::vector<NerFrame> a, const std::vector<NerFrame>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

const std::vector<std::string>& synth_kinds() {
  static const std::vector<std::string> kinds = {"ner", "re", "ee", "absa", "all", "aligned", "conflict"};
  return kinds;
}

std::vector<SynthTask> synth_bundle(const std::string& kind, int size, std::uint64_t seed) {
  if (size < 1) throw std::invalid_argument("synth size must be >= 1");
  const int held = eval_size(size);
  std::vector<SynthTask> out;
  if (kind == "ner" || kind == "all")
    out.push_back(make_task("synth_ner", TaskKind::ner, ner_labels(), kNerTemplates, derive_seed(seed, 101), size,
                            held, [](Rng& r) { return ner_sentence(r, concat(kFramesA, kFramesB), 0.3, "ORG"); }));
  if (kind == "re" || kind == "all")
    out.push_back(make_task("synth_re", TaskKind::re,
                            LabelSpace({"PER", "ORG", "LOC"}, {"Work_For", "Live_In", "Located_In"}),
                            kRelationTemplates, derive_seed(seed, 102), size, held,
                            [](Rng& r) { return from_frames(r, kRelationFrames); }));
  if (kind == "ee" || kind == "all")
    out.push_back(make_task("synth_ee", TaskKind::ee,
                            LabelSpace({"Attack", "Meet", "Transport"},
                                       {"Attacker", "Target", "Place", "Entity", "Artifact", "Destination"}),
                            kEventTemplates, derive_seed(seed, 103), size, held,
                            [](Rng& r) { return from_frames(r, kEventFrames); }));
  if (kind == "absa" || kind == "all")
    out.push_back(make_task("synth_absa", TaskKind::absa, LabelSpace::absa(), kSentimentTemplates,
                            derive_seed(seed, 104), size, held,
                            [](Rng& r) { return from_frames(r, kSentimentFrames); }));
  if (kind == "aligned") {
    out.push_back(ner_source("aligned_a", kFramesA, "ORG", size, derive_seed(seed, 201)));
    out.push_back(ner_source("aligned_b", kFramesB, "ORG", size, derive_seed(seed, 202)));
    out.push_back(ner_target("aligned_target", size, derive_seed(seed, 203)));
  }
  if (kind == "conflict") {
    out.push_back(ner_source("conflict_a", kFramesA, "ORG", size, derive_seed(seed, 201)));
    out.push_back(ner_source("conflict_b", kFramesB, "LOC", size, derive_seed(seed, 202)));
    out.push_back(ner_target("conflict_target", size, derive_seed(seed, 203)));
  }
  if (out.empty()) throw std::invalid_argument("unknown synth kind '" + kind + "'");
  return out;
}

std::vector<std::filesystem::path> write_synth(const std::filesystem::path& dir, const std::vector<SynthTask>& tasks) {
  std::vector<std::filesystem::path> manifests;
  for (const auto& t : tasks) {
    const auto base = dir / t.dataset.id;
    std::filesystem::create_directories(base);
    write_jsonl(base / "train.jsonl", t.dataset.train);
    write_jsonl(base / "dev.jsonl", t.dataset.dev);
    write_jsonl(base / "test.jsonl", t.dataset.test);
    write_instruction_file(base / "instructions.json", {t.dataset.id, t.templates});
    const json manifest = {{"id", t.dataset.id},
                           {"task", to_string(t.dataset.task)},
                           {"entity_types", t.dataset.labels.entity_types()},
                           {"relation_types", t.dataset.labels.relation_types()},
                           {"train", "train.jsonl"},
                           {"dev", "dev.jsonl"},
                           {"test", "test.jsonl"},
                           {"instructions", "instructions.json"}};
    const auto path = base / "manifest.json";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << manifest.dump(2) << '\n';
    manifests.push_back(path);
  }
  return manifests;
}

}  // namespace tie
