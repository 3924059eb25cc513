#include "muan/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace muan {

using nlohmann::json;

std::array<double, kSpatialWidth> spatial_feature(const Box& b, double canvas_w, double canvas_h) {
  return {b.x_tl / canvas_w, b.y_tl / canvas_h, b.x_br / canvas_w, b.y_br / canvas_h,
          b.area() / (canvas_w * canvas_h)};
}

// ---- Vocabulary ----------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.size() < 2) throw VocabularyError("vocabulary needs at least the pad and [ans] entries");
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i].empty() || words_[i].find_first_of(" \t\r\n") != std::string::npos) {
      throw VocabularyError("vocabulary entry " + std::to_string(i) + " is empty or contains whitespace");
    }
    if (!index_.emplace(words_[i], i).second) throw VocabularyError("duplicate vocabulary entry '" + words_[i] + "'");
  }
}

Vocabulary Vocabulary::toy() {
  std::vector<std::string> words = {"<pad>", "[ans]", "how",   "many", "is",   "there", "a",
                                    "what",  "color", "shape", "size", "the",  "object"};
  for (const char* w : kColorNames) words.emplace_back(w);
  for (const char* w : kShapeNames) words.emplace_back(w);
  for (const char* w : kSizeNames) words.emplace_back(w);
  return Vocabulary(std::move(words));
}

std::size_t Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw VocabularyError("unknown word '" + word + "'");
  return it->second;
}

const std::string& Vocabulary::word(std::size_t id) const {
  if (id >= words_.size()) {
    throw VocabularyError("word id " + std::to_string(id) + " outside vocabulary of " + std::to_string(words_.size()));
  }
  return words_[id];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const std::string& w : words_) out << w << '\n';
  if (!out) throw std::runtime_error("failed writing vocabulary file " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary file " + path.string());
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) words.push_back(line);
  return Vocabulary(std::move(words));
}

// ---- Questions -----------------------------------------------------------------

const std::vector<std::string>& toy_answers() {
  static const std::vector<std::string> answers = [] {
    std::vector<std::string> a;
    for (int c = 0; c <= 10; ++c) a.push_back(std::to_string(c));
    a.emplace_back("yes");
    a.emplace_back("no");
    for (const char* w : kColorNames) a.emplace_back(w);
    for (const char* w : kShapeNames) a.emplace_back(w);
    for (const char* w : kSizeNames) a.emplace_back(w);
    return a;
  }();
  return answers;
}

std::size_t answer_id(const std::string& answer) {
  const auto& answers = toy_answers();
  auto it = std::find(answers.begin(), answers.end(), answer);
  if (it == answers.end()) throw LabelError("unknown answer '" + answer + "'");
  return static_cast<std::size_t>(it - answers.begin());
}

std::string to_string(QuestionType type) {
  switch (type) {
    case QuestionType::count: return "count";
    case QuestionType::exists: return "exists";
    case QuestionType::attribute: return "attribute";
  }
  return "count";
}

namespace {

QuestionType parse_question_type(const std::string& name) {
  if (name == "count") return QuestionType::count;
  if (name == "exists") return QuestionType::exists;
  if (name == "attribute") return QuestionType::attribute;
  throw FormatError("unknown question type '" + name + "'");
}

template <std::size_t N>
std::optional<std::size_t> find_name(const std::array<const char*, N>& names, const std::string& word) {
  for (std::size_t i = 0; i < N; ++i)
    if (word == names[i]) return i;
  return std::nullopt;
}

template <std::size_t N>
std::size_t name_index(const std::array<const char*, N>& names, const std::string& word, const char* what) {
  if (auto i = find_name(names, word)) return *i;
  throw FormatError(std::string("unknown ") + what + " '" + word + "'");
}

void append_filter(std::vector<std::string>& words, const ObjectFilter& f) {
  if (f.size) words.emplace_back(kSizeNames[*f.size]);
  if (f.color) words.emplace_back(kColorNames[*f.color]);
  words.emplace_back(f.shape ? kShapeNames[*f.shape] : "object");
}

// Parses "[size] [color] shape|object" and requires it to end the sequence.
ObjectFilter parse_filter(std::span<const std::string> words) {
  ObjectFilter f;
  std::size_t i = 0;
  if (i < words.size()) {
    if (auto s = find_name(kSizeNames, words[i])) f.size = *s, ++i;
  }
  if (i < words.size()) {
    if (auto c = find_name(kColorNames, words[i])) f.color = *c, ++i;
  }
  if (i + 1 != words.size()) throw LabelError("malformed object description");
  if (words[i] != "object") {
    auto s = find_name(kShapeNames, words[i]);
    if (!s) throw LabelError("expected a shape or 'object', got '" + words[i] + "'");
    f.shape = *s;
  }
  return f;
}

const char* attribute_word(Attribute a) {
  switch (a) {
    case Attribute::color: return "color";
    case Attribute::shape: return "shape";
    case Attribute::size: return "size";
  }
  return "color";
}

bool starts_with(std::span<const std::string> words, std::initializer_list<const char*> prefix) {
  if (words.size() < prefix.size()) return false;
  std::size_t i = 0;
  for (const char* p : prefix)
    if (words[i++] != p) return false;
  return true;
}

}  // namespace

bool ObjectFilter::matches(const SceneObject& o) const {
  return (!size || *size == o.size) && (!color || *color == o.color) && (!shape || *shape == o.shape);
}

std::size_t ObjectFilter::count_in(const Scene& scene) const {
  return static_cast<std::size_t>(
      std::count_if(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) { return matches(o); }));
}

std::vector<std::string> question_words(const Question& q) {
  std::vector<std::string> words;
  switch (q.type) {
    case QuestionType::count:
      words = {"how", "many"};
      break;
    case QuestionType::exists:
      words = {"is", "there", "a"};
      break;
    case QuestionType::attribute:
      words = {"what", attribute_word(q.asked), "is", "the"};
      break;
  }
  append_filter(words, q.filter);
  return words;
}

Question parse_question(std::span<const std::string> words) {
  Question q;
  if (starts_with(words, {"how", "many"})) {
    q.type = QuestionType::count;
    q.filter = parse_filter(words.subspan(2));
  } else if (starts_with(words, {"is", "there", "a"})) {
    q.type = QuestionType::exists;
    q.filter = parse_filter(words.subspan(3));
  } else if (words.size() > 4 && words[0] == "what" && words[2] == "is" && words[3] == "the") {
    q.type = QuestionType::attribute;
    if (words[1] == "color") q.asked = Attribute::color;
    else if (words[1] == "shape") q.asked = Attribute::shape;
    else if (words[1] == "size") q.asked = Attribute::size;
    else throw LabelError("unknown attribute '" + words[1] + "'");
    q.filter = parse_filter(words.subspan(4));
  } else {
    throw LabelError("unrecognized question template");
  }
  return q;
}

std::string answer_question(const Scene& scene, const Question& q) {
  const std::size_t matching = q.filter.count_in(scene);
  switch (q.type) {
    case QuestionType::count:
      return std::to_string(matching);
    case QuestionType::exists:
      return matching > 0 ? "yes" : "no";
    case QuestionType::attribute:
      break;
  }
  if (matching != 1) throw LabelError("attribute question matches " + std::to_string(matching) + " objects");
  const SceneObject& o = *std::find_if(scene.objects.begin(), scene.objects.end(),
                                       [&](const SceneObject& obj) { return q.filter.matches(obj); });
  switch (q.asked) {
    case Attribute::color: return kColorNames[o.color];
    case Attribute::shape: return kShapeNames[o.shape];
    case Attribute::size: return kSizeNames[o.size];
  }
  return {};
}

std::vector<std::string> referring_words(const ObjectFilter& filter) {
  std::vector<std::string> words = {"the"};
  append_filter(words, filter);
  return words;
}

ObjectFilter parse_referring(std::span<const std::string> words) {
  if (words.empty() || words[0] != "the") throw LabelError("referring expression must start with 'the'");
  return parse_filter(words.subspan(1));
}

double VqaLabel::count_for(std::size_t answer_id) const {
  for (const auto& [a, c] : annotator_counts)
    if (a == answer_id) return static_cast<double>(c);
  return 0.0;
}

// ---- Generation ----------------------------------------------------------------

namespace {

constexpr double kSmallSide[2] = {8.0, 12.0};
constexpr double kLargeSide[2] = {16.0, 22.0};
constexpr std::size_t kPlacementTries = 400;

double round_centi(double x) { return std::round(x * 100.0) / 100.0; }

Box rounded(Box b) { return Box{round_centi(b.x_tl), round_centi(b.y_tl), round_centi(b.x_br), round_centi(b.y_br)}; }

double standard_normal(RngStream& rng) {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u = 1.0 - rng.uniform();
  const double v = rng.uniform();
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

SceneObject random_attributes(RngStream& rng) {
  SceneObject o;
  o.shape = rng.uniform_index(kShapeNames.size());
  o.color = rng.uniform_index(kColorNames.size());
  o.size = rng.uniform_index(kSizeNames.size());
  return o;
}

// Fills unset attributes of `filter` at random.
SceneObject matching_object(RngStream& rng, const ObjectFilter& filter) {
  SceneObject o = random_attributes(rng);
  if (filter.shape) o.shape = *filter.shape;
  if (filter.color) o.color = *filter.color;
  if (filter.size) o.size = *filter.size;
  return o;
}

SceneObject non_matching_object(RngStream& rng, const ObjectFilter& filter) {
  for (;;) {
    SceneObject o = random_attributes(rng);
    if (!filter.matches(o)) return o;
  }
}

// Random filter over the attributes flagged in `allowed` (size, color, shape),
// with at least one attribute set.
ObjectFilter random_filter(RngStream& rng, std::array<bool, 3> allowed) {
  for (;;) {
    ObjectFilter f;
    if (allowed[0] && rng.bernoulli(0.5)) f.size = rng.uniform_index(kSizeNames.size());
    if (allowed[1] && rng.bernoulli(0.5)) f.color = rng.uniform_index(kColorNames.size());
    if (allowed[2] && rng.bernoulli(0.5)) f.shape = rng.uniform_index(kShapeNames.size());
    if (f.size || f.color || f.shape) return f;
  }
}

// Gives every object a box inside the canvas with pairwise IoU below the limit.
bool place_objects(RngStream& rng, std::vector<SceneObject>& objects, const ToyConfig& config) {
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const double* range = objects[i].size == 0 ? kSmallSide : kLargeSide;
    bool placed = false;
    for (std::size_t t = 0; t < kPlacementTries && !placed; ++t) {
      const double side = round_centi(rng.uniform(range[0], range[1]));
      const double x = round_centi(rng.uniform(0.0, config.canvas - side));
      const double y = round_centi(rng.uniform(0.0, config.canvas - side));
      const Box b{x, y, x + side, y + side};
      placed = std::all_of(objects.begin(), objects.begin() + static_cast<std::ptrdiff_t>(i),
                           [&](const SceneObject& o) { return iou(o.box, b) < config.max_pair_iou; });
      if (placed) objects[i].box = rounded(b);
    }
    if (!placed) return false;
  }
  return true;
}

Scene build_scene(RngStream& rng, std::vector<SceneObject> objects, const ToyConfig& config) {
  for (std::size_t attempt = 0; attempt < config.max_retries; ++attempt) {
    if (place_objects(rng, objects, config)) {
      rng.shuffle(std::span<SceneObject>(objects));
      Scene scene;
      scene.width = scene.height = config.canvas;
      scene.objects = std::move(objects);
      return scene;
    }
  }
  throw std::runtime_error("could not place " + std::to_string(objects.size()) + " objects on the canvas");
}

std::size_t object_count(RngStream& rng, std::size_t at_least, const ToyConfig& config) {
  const std::size_t lo = std::max(config.min_objects, at_least);
  return lo + rng.uniform_index(config.max_objects - lo + 1);
}

std::vector<std::size_t> to_ids(const std::vector<std::string>& words, const Vocabulary& vocab) {
  std::vector<std::size_t> ids;
  ids.reserve(words.size());
  for (const std::string& w : words) ids.push_back(vocab.id(w));
  return ids;
}

// Builds a scene and question whose exact answer is `answer`.
std::pair<Scene, Question> vqa_for_answer(RngStream& rng, std::size_t answer, const ToyConfig& config) {
  const std::string& text = toy_answers()[answer];
  std::vector<SceneObject> objects;
  Question q;
  if (answer <= 10) {
    const std::size_t c = answer;
    q.type = QuestionType::count;
    // "how many object" counts everything; only usable when c is a valid scene size.
    const bool whole_scene = c >= config.min_objects && rng.bernoulli(0.1);
    if (!whole_scene) q.filter = random_filter(rng, {true, true, true});
    const std::size_t n = whole_scene ? c : object_count(rng, std::max<std::size_t>(c, 1), config);
    for (std::size_t i = 0; i < c; ++i) objects.push_back(matching_object(rng, q.filter));
    while (objects.size() < n) objects.push_back(non_matching_object(rng, q.filter));
  } else if (text == "yes" || text == "no") {
    q.type = QuestionType::exists;
    q.filter = random_filter(rng, {true, true, true});
    const std::size_t n = object_count(rng, 1, config);
    const std::size_t hits = text == "yes" ? 1 + rng.uniform_index(std::min<std::size_t>(n, 3)) : 0;
    for (std::size_t i = 0; i < hits; ++i) objects.push_back(matching_object(rng, q.filter));
    while (objects.size() < n) objects.push_back(non_matching_object(rng, q.filter));
  } else {
    q.type = QuestionType::attribute;
    SceneObject referent = random_attributes(rng);
    if (auto c = find_name(kColorNames, text)) {
      q.asked = Attribute::color;
      referent.color = *c;
      q.filter = random_filter(rng, {true, false, true});
    } else if (auto s = find_name(kShapeNames, text)) {
      q.asked = Attribute::shape;
      referent.shape = *s;
      q.filter = random_filter(rng, {true, true, false});
    } else {
      q.asked = Attribute::size;
      referent.size = name_index(kSizeNames, text, "size");
      q.filter = random_filter(rng, {false, true, true});
    }
    if (q.filter.size) referent.size = *q.filter.size;
    if (q.filter.color) referent.color = *q.filter.color;
    if (q.filter.shape) referent.shape = *q.filter.shape;
    const std::size_t n = object_count(rng, 1, config);
    objects.push_back(referent);
    while (objects.size() < n) objects.push_back(non_matching_object(rng, q.filter));
  }
  return {build_scene(rng, std::move(objects), config), q};
}

Box jittered(RngStream& rng, const Box& b, const ToyConfig& config) {
  const double side = std::max(b.width(), b.height());
  const double cx = 0.5 * (b.x_tl + b.x_br) + config.jitter_center * side * standard_normal(rng);
  const double cy = 0.5 * (b.y_tl + b.y_br) + config.jitter_center * side * standard_normal(rng);
  const double w = b.width() * std::exp(config.jitter_scale * standard_normal(rng));
  const double h = b.height() * std::exp(config.jitter_scale * standard_normal(rng));
  Box out{std::clamp(cx - 0.5 * w, 0.0, config.canvas - 1.0), std::clamp(cy - 0.5 * h, 0.0, config.canvas - 1.0),
          0.0, 0.0};
  out.x_br = std::clamp(cx + 0.5 * w, out.x_tl + 1.0, config.canvas);
  out.y_br = std::clamp(cy + 0.5 * h, out.y_tl + 1.0, config.canvas);
  return rounded(out);
}

std::vector<Proposal> make_proposals(RngStream& rng, const Scene& scene, const ToyConfig& config) {
  std::vector<Proposal> proposals;
  for (const SceneObject& o : scene.objects) {
    for (std::size_t k = 0; k < config.proposals_per_object; ++k) {
      Proposal p;
      p.box = jittered(rng, o.box, config);
      double best = -1.0;
      for (std::size_t j = 0; j < scene.objects.size(); ++j) {
        const double overlap = iou(p.box, scene.objects[j].box);
        if (overlap > best) best = overlap, p.object = j;
      }
      proposals.push_back(p);
    }
  }
  rng.shuffle(std::span<Proposal>(proposals));
  return proposals;
}

// Non-empty attribute subsets that match object r and no other object.
std::vector<ObjectFilter> unique_filters(const Scene& scene, std::size_t r) {
  std::vector<ObjectFilter> out;
  const SceneObject& o = scene.objects[r];
  for (unsigned mask = 1; mask < 8; ++mask) {
    ObjectFilter f;
    if (mask & 1u) f.size = o.size;
    if (mask & 2u) f.color = o.color;
    if (mask & 4u) f.shape = o.shape;
    if (f.count_in(scene) == 1) out.push_back(f);
  }
  return out;
}

}  // namespace

ToySample gen_vqa_sample(RngStream& rng, const ToyConfig& config, const Vocabulary& vocab) {
  const std::size_t answer = rng.uniform_index(toy_answers().size());
  auto [scene, question] = vqa_for_answer(rng, answer, config);
  const std::size_t derived = answer_id(answer_question(scene, question));
  if (derived != answer) throw std::logic_error("vqa generator produced an inconsistent answer");
  ToySample s;
  s.task = Task::vqa;
  s.tokens = to_ids(question_words(question), vocab);
  s.scene = std::move(scene);
  VqaLabel label;
  label.type = question.type;
  label.answer = answer;
  label.annotator_counts = {{answer, config.annotators}};
  s.vqa = label;
  return s;
}

ToySample gen_grounding_sample(RngStream& rng, const ToyConfig& config, const Vocabulary& vocab) {
  for (std::size_t attempt = 0; attempt < config.max_retries; ++attempt) {
    std::vector<SceneObject> objects(object_count(rng, 1, config));
    for (SceneObject& o : objects) o = random_attributes(rng);
    Scene scene = build_scene(rng, std::move(objects), config);
    std::vector<std::size_t> candidates;
    for (std::size_t r = 0; r < scene.objects.size(); ++r)
      if (!unique_filters(scene, r).empty()) candidates.push_back(r);
    if (candidates.empty()) continue;
    const std::size_t referent = candidates[rng.uniform_index(candidates.size())];
    const std::vector<ObjectFilter> filters = unique_filters(scene, referent);
    const ObjectFilter& filter = filters[rng.uniform_index(filters.size())];
    scene.proposals = make_proposals(rng, scene, config);
    ToySample s;
    s.task = Task::grounding;
    s.tokens = to_ids(referring_words(filter), vocab);
    s.grounding = GroundingLabel{referent, scene.objects[referent].box};
    s.scene = std::move(scene);
    return s;
  }
  throw std::runtime_error("no uniquely describable object after " + std::to_string(config.max_retries) +
                           " scenes");
}

std::vector<ToySample> generate_dataset(Task task, std::size_t count, std::uint64_t seed, const ToyConfig& config,
                                        const Vocabulary& vocab) {
  const RngStream base(seed);
  std::vector<ToySample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng = base.split(i);
    out.push_back(task == Task::vqa ? gen_vqa_sample(rng, config, vocab) : gen_grounding_sample(rng, config, vocab));
  }
  return out;
}

// ---- Serialization -------------------------------------------------------------

namespace {

json box_json(const Box& b) { return json::array({b.x_tl, b.y_tl, b.x_br, b.y_br}); }

Box box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("box must be an array of 4 numbers");
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  try {
    validate_box(b);
  } catch (const ContractError& e) {
    throw FormatError(std::string("invalid box: ") + e.what());
  }
  return b;
}

}  // namespace

std::string sample_to_json_line(const ToySample& s) {
  json objects = json::array();
  for (const SceneObject& o : s.scene.objects) {
    objects.push_back({{"shape", kShapeNames[o.shape]},
                       {"color", kColorNames[o.color]},
                       {"size", kSizeNames[o.size]},
                       {"box", box_json(o.box)}});
  }
  json scene = {{"width", s.scene.width}, {"height", s.scene.height}, {"objects", objects}};
  if (s.task == Task::grounding) {
    json proposals = json::array();
    for (const Proposal& p : s.scene.proposals) proposals.push_back({{"box", box_json(p.box)}, {"object", p.object}});
    scene["proposals"] = proposals;
  }
  json label;
  if (s.task == Task::vqa) {
    if (!s.vqa) throw ContractError("vqa sample without a vqa label");
    json counts = json::object();
    for (const auto& [a, c] : s.vqa->annotator_counts) counts[toy_answers().at(a)] = c;
    label = {{"type", to_string(s.vqa->type)}, {"answer", toy_answers().at(s.vqa->answer)}, {"annotator_counts", counts}};
  } else {
    if (!s.grounding) throw ContractError("grounding sample without a grounding label");
    label = {{"referent", s.grounding->referent}, {"box", box_json(s.grounding->box)}};
  }
  json line = {{"version", kDatasetVersion}, {"task", to_string(s.task)}, {"tokens", s.tokens},
               {"scene", scene},             {"label", label}};
  return line.dump();
}

ToySample sample_from_json_line(const std::string& line) {
  ToySample s;
  try {
    const json j = json::parse(line);
    if (j.at("version").get<int>() != kDatasetVersion) {
      throw FormatError("unsupported dataset version " + j.at("version").dump());
    }
    s.task = parse_task(j.at("task").get<std::string>());
    s.tokens = j.at("tokens").get<std::vector<std::size_t>>();
    const json& scene = j.at("scene");
    s.scene.width = scene.at("width").get<double>();
    s.scene.height = scene.at("height").get<double>();
    if (!(s.scene.width > 0.0 && s.scene.height > 0.0)) throw FormatError("canvas extents must be positive");
    for (const json& o : scene.at("objects")) {
      SceneObject obj;
      obj.shape = name_index(kShapeNames, o.at("shape").get<std::string>(), "shape");
      obj.color = name_index(kColorNames, o.at("color").get<std::string>(), "color");
      obj.size = name_index(kSizeNames, o.at("size").get<std::string>(), "size");
      obj.box = box_from(o.at("box"));
      s.scene.objects.push_back(obj);
    }
    if (s.task == Task::grounding) {
      for (const json& p : scene.at("proposals")) {
        Proposal prop{box_from(p.at("box")), p.at("object").get<std::size_t>()};
        if (prop.object >= s.scene.objects.size()) throw FormatError("proposal refers to a missing object");
        s.scene.proposals.push_back(prop);
      }
    }
    const json& label = j.at("label");
    if (s.task == Task::vqa) {
      VqaLabel v;
      v.type = parse_question_type(label.at("type").get<std::string>());
      v.answer = answer_id(label.at("answer").get<std::string>());
      for (const auto& [answer, count] : label.at("annotator_counts").items()) {
        v.annotator_counts.emplace_back(answer_id(answer), count.get<std::size_t>());
      }
      // Stored sorted by answer text (JSON object order); keep that order.
      s.vqa = v;
    } else {
      GroundingLabel g;
      g.referent = label.at("referent").get<std::size_t>();
      if (g.referent >= s.scene.objects.size()) throw FormatError("referent index outside the scene");
      g.box = box_from(label.at("box"));
      s.grounding = g;
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset line: ") + e.what());
  } catch (const LabelError& e) {
    throw FormatError(std::string("malformed dataset label: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed dataset line: ") + e.what());
  }
  return s;
}

void write_dataset(const std::filesystem::path& path, std::span<const ToySample> samples) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset " + tmp.string());
    for (const ToySample& s : samples) out << sample_to_json_line(s) << '\n';
    if (!out) throw std::runtime_error("failed writing dataset " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<ToySample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read dataset " + path.string());
  std::vector<ToySample> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace muan
