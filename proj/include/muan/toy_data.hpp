#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "muan/heads.hpp"
#include "muan/rng.hpp"
#include "muan/task.hpp"

namespace muan {

inline constexpr std::array<const char*, 3> kShapeNames = {"circle", "square", "triangle"};
inline constexpr std::array<const char*, 8> kColorNames = {"red", "green", "blue", "yellow",
                                                            "purple", "cyan", "gray", "brown"};
inline constexpr std::array<const char*, 2> kSizeNames = {"small", "large"};
// shape + color + size one-hots
inline constexpr std::size_t kAppearanceWidth = kShapeNames.size() + kColorNames.size() + kSizeNames.size();
inline constexpr std::size_t kSpatialWidth = 5;

struct SceneObject {
  std::size_t shape = 0;
  std::size_t color = 0;
  std::size_t size = 0;
  Box box;
};

// A candidate box handed to the grounding model, labelled with the object it
// overlaps most (its appearance features are that object's attributes).
struct Proposal {
  Box box;
  std::size_t object = 0;
};

struct Scene {
  double width = 100.0;
  double height = 100.0;
  std::vector<SceneObject> objects;
  std::vector<Proposal> proposals;  // grounding only
};

// [x_tl/W, y_tl/H, x_br/W, y_br/H, wh/WH]
std::array<double, kSpatialWidth> spatial_feature(const Box& b, double canvas_w, double canvas_h);

/// Fixed word list; id = position. Id 0 is padding and id 1 the [ans] token.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kAns = 1;

  explicit Vocabulary(std::vector<std::string> words);
  // Every word the toy generators can emit.
  static Vocabulary toy();

  std::size_t size() const { return words_.size(); }
  // Throws VocabularyError for unknown words / out-of-range ids.
  std::size_t id(const std::string& word) const;
  const std::string& word(std::size_t id) const;
  const std::vector<std::string>& words() const { return words_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Answer classes for toy VQA: counts 0..10, yes/no, colors, shapes, sizes.
const std::vector<std::string>& toy_answers();
std::size_t answer_id(const std::string& answer);  // LabelError when unknown

enum class QuestionType { count, exists, attribute };
std::string to_string(QuestionType type);

// Attribute constraints; unset fields match anything.
struct ObjectFilter {
  std::optional<std::size_t> size;
  std::optional<std::size_t> color;
  std::optional<std::size_t> shape;

  bool matches(const SceneObject& o) const;
  std::size_t count_in(const Scene& scene) const;
};

enum class Attribute { color, shape, size };

struct Question {
  QuestionType type = QuestionType::count;
  ObjectFilter filter;
  Attribute asked = Attribute::color;  // attribute questions only
};

std::vector<std::string> question_words(const Question& q);
// Inverse of question_words; throws LabelError on anything it cannot parse.
Question parse_question(std::span<const std::string> words);
// Exact answer computed from scene state. Throws LabelError when an
// attribute question does not single out one object.
std::string answer_question(const Scene& scene, const Question& q);

std::vector<std::string> referring_words(const ObjectFilter& filter);
ObjectFilter parse_referring(std::span<const std::string> words);

struct VqaLabel {
  QuestionType type = QuestionType::count;
  std::size_t answer = 0;
  // Per-answer annotator counts, sparse: {answer id, count}.
  std::vector<std::pair<std::size_t, std::size_t>> annotator_counts;

  double count_for(std::size_t answer_id) const;
};

struct GroundingLabel {
  std::size_t referent = 0;
  Box box;
};

struct ToySample {
  Task task = Task::vqa;
  std::vector<std::size_t> tokens;  // word ids, no [ans], no padding
  Scene scene;
  std::optional<VqaLabel> vqa;
  std::optional<GroundingLabel> grounding;
};

struct ToyConfig {
  double canvas = 100.0;
  std::size_t min_objects = 3;
  std::size_t max_objects = 10;
  double max_pair_iou = 0.3;
  std::size_t annotators = 3;
  // Grounding proposals: jittered copies per object; center shift and log-scale
  // noise are in units of the object's side length.
  std::size_t proposals_per_object = 6;
  double jitter_center = 0.2;
  double jitter_scale = 0.2;
  std::size_t max_retries = 100;
};

// Answer classes are drawn uniformly first and the scene is built to match,
// so class frequencies are balanced by construction.
ToySample gen_vqa_sample(RngStream& rng, const ToyConfig& config, const Vocabulary& vocab);
// Throws std::runtime_error after config.max_retries scenes without a
// uniquely describable object.
ToySample gen_grounding_sample(RngStream& rng, const ToyConfig& config, const Vocabulary& vocab);

// Sample i is generated from base.split(i), so any subset can be regenerated
// independently.
std::vector<ToySample> generate_dataset(Task task, std::size_t count, std::uint64_t seed, const ToyConfig& config,
                                        const Vocabulary& vocab);

// ---- Dataset files: one JSON object per line ------------------------------------

inline constexpr int kDatasetVersion = 1;

std::string sample_to_json_line(const ToySample& s);
ToySample sample_from_json_line(const std::string& line);  // FormatError on bad input
void write_dataset(const std::filesystem::path& path, std::span<const ToySample> samples);
std::vector<ToySample> read_dataset(const std::filesystem::path& path);

}  // namespace muan
