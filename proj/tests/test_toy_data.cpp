#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "muan/encoders.hpp"
#include "muan/model.hpp"
#include "muan/toy_data.hpp"
#include "support.hpp"

using namespace muan;

namespace {

std::vector<std::string> words_of(const ToySample& s, const Vocabulary& v) {
  std::vector<std::string> w;
  for (std::size_t id : s.tokens) w.push_back(v.word(id));
  return w;
}

SceneObject object(const char* shape, const char* color, const char* size, Box box) {
  auto find = [](const auto& names, const char* n) {
    return static_cast<std::size_t>(std::find_if(names.begin(), names.end(),
                                                 [&](const char* x) { return std::string(x) == n; }) -
                                    names.begin());
  };
  return SceneObject{find(kShapeNames, shape), find(kColorNames, color), find(kSizeNames, size), box};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Vocabulary, SpecialIdsAndLookups) {
  const Vocabulary v = Vocabulary::toy();
  EXPECT_EQ(v.word(Vocabulary::kPad), "<pad>");
  EXPECT_EQ(v.word(Vocabulary::kAns), "[ans]");
  EXPECT_EQ(v.word(v.id("purple")), "purple");
  EXPECT_THROW(v.id("zebra"), VocabularyError);
  EXPECT_THROW(v.word(v.size()), VocabularyError);
}

TEST(Answers, CoverCountsAttributesAndYesNo) {
  EXPECT_EQ(toy_answers().size(), 26u);
  EXPECT_EQ(toy_answers()[answer_id("7")], "7");
  EXPECT_NO_THROW(answer_id("yes"));
  EXPECT_NO_THROW(answer_id("triangle"));
  EXPECT_THROW(answer_id("maybe"), LabelError);
}

TEST(Questions, AnswersComeFromSceneState) {
  Scene scene;
  scene.objects = {object("circle", "red", "small", {0, 0, 10, 10}), object("circle", "red", "large", {20, 20, 40, 40}),
                   object("square", "blue", "small", {60, 60, 70, 70})};
  const std::vector<std::string> count_q = {"how", "many", "red", "circle"};
  EXPECT_EQ(answer_question(scene, parse_question(count_q)), "2");
  const std::vector<std::string> exists_q = {"is", "there", "a", "blue", "square"};
  EXPECT_EQ(answer_question(scene, parse_question(exists_q)), "yes");
  scene.objects[2].color = 0;
  EXPECT_EQ(answer_question(scene, parse_question(exists_q)), "no");
  const std::vector<std::string> attr_q = {"what", "size", "is", "the", "square"};
  EXPECT_EQ(answer_question(scene, parse_question(attr_q)), "small");
  const std::vector<std::string> ambiguous = {"what", "color", "is", "the", "circle"};
  EXPECT_THROW(answer_question(scene, parse_question(ambiguous)), LabelError);
}

TEST(Questions, WordsRoundTrip) {
  Question q;
  q.type = QuestionType::attribute;
  q.asked = Attribute::shape;
  q.filter.color = 3;
  q.filter.size = 1;
  Question back = parse_question(question_words(q));
  EXPECT_EQ(back.type, q.type);
  EXPECT_EQ(back.asked, q.asked);
  EXPECT_EQ(back.filter.color, q.filter.color);
  EXPECT_EQ(back.filter.size, q.filter.size);
  EXPECT_FALSE(back.filter.shape.has_value());
}

TEST(GenVqa, GeneratedAnswerMatchesOwnOracle) {
  const Vocabulary v = Vocabulary::toy();
  ToyConfig cfg;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    RngStream rng(seed);
    ToySample s = gen_vqa_sample(rng, cfg, v);
    const std::vector<std::string> words = words_of(s, v);
    EXPECT_EQ(answer_id(answer_question(s.scene, parse_question(words))), s.vqa->answer);
    EXPECT_LE(words.size(), 14u);
  }
}

TEST(GenVqa, ScenesSatisfyLayoutInvariants) {
  const Vocabulary v = Vocabulary::toy();
  ToyConfig cfg;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RngStream rng(seed);
    ToySample s = gen_vqa_sample(rng, cfg, v);
    const auto& objs = s.scene.objects;
    ASSERT_GE(objs.size(), 3u);
    ASSERT_LE(objs.size(), 10u);
    for (std::size_t i = 0; i < objs.size(); ++i) {
      const Box& b = objs[i].box;
      EXPECT_GE(b.x_tl, 0.0);
      EXPECT_GE(b.y_tl, 0.0);
      EXPECT_LE(b.x_br, s.scene.width);
      EXPECT_LE(b.y_br, s.scene.height);
      for (std::size_t j = i + 1; j < objs.size(); ++j) EXPECT_LT(iou(b, objs[j].box), 0.3);
    }
  }
}

TEST(GenVqa, AnswerClassesAreBalanced) {
  const Vocabulary v = Vocabulary::toy();
  const std::vector<ToySample> data = generate_dataset(Task::vqa, 10000, 77, ToyConfig{}, v);
  std::map<std::size_t, std::size_t> freq;
  std::map<QuestionType, std::size_t> types;
  for (const ToySample& s : data) ++freq[s.vqa->answer], ++types[s.vqa->type];
  const double expected = 10000.0 / static_cast<double>(toy_answers().size());
  ASSERT_EQ(freq.size(), toy_answers().size());
  for (const auto& [answer, n] : freq) {
    EXPECT_GE(static_cast<double>(n), 0.5 * expected) << toy_answers()[answer];
    EXPECT_LE(static_cast<double>(n), 2.0 * expected) << toy_answers()[answer];
  }
  EXPECT_EQ(types.size(), 3u);
}

TEST(GenVqa, SameSeedSameBytes) {
  const Vocabulary v = Vocabulary::toy();
  RngStream a(5), b(5);
  EXPECT_EQ(sample_to_json_line(gen_vqa_sample(a, ToyConfig{}, v)), sample_to_json_line(gen_vqa_sample(b, ToyConfig{}, v)));
}

TEST(GenGrounding, QueryIdentifiesReferentUniquely) {
  const Vocabulary v = Vocabulary::toy();
  ToyConfig cfg;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RngStream rng(seed);
    ToySample s = gen_grounding_sample(rng, cfg, v);
    const std::vector<std::string> words = words_of(s, v);
    ObjectFilter f = parse_referring(words);
    EXPECT_EQ(f.count_in(s.scene), 1u);
    EXPECT_TRUE(f.matches(s.scene.objects[s.grounding->referent]));
    EXPECT_EQ(s.grounding->box, s.scene.objects[s.grounding->referent].box);
    EXPECT_LE(words.size(), 15u);
    EXPECT_EQ(s.scene.proposals.size(), s.scene.objects.size() * cfg.proposals_per_object);
    for (const Proposal& p : s.scene.proposals) {
      double best = 0.0;
      for (const SceneObject& o : s.scene.objects) best = std::max(best, iou(p.box, o.box));
      EXPECT_EQ(iou(p.box, s.scene.objects[p.object].box), best);
    }
  }
}

TEST(GenGrounding, SingleObjectSceneRefersToIt) {
  const Vocabulary v = Vocabulary::toy();
  ToyConfig cfg;
  cfg.min_objects = cfg.max_objects = 1;
  RngStream rng(3);
  ToySample s = gen_grounding_sample(rng, cfg, v);
  EXPECT_EQ(s.grounding->referent, 0u);
}

TEST(GenGrounding, ExactProposalScoresOne) {
  const Vocabulary v = Vocabulary::toy();
  RngStream rng(4);
  ToySample s = gen_grounding_sample(rng, ToyConfig{}, v);
  std::vector<Box> props;
  for (const Proposal& p : s.scene.proposals) props.push_back(p.box);
  props.push_back(s.grounding->box);
  GroundTruthScores gt = make_ground_truth_scores(props, s.grounding->box, 0.5, s.scene.width, s.scene.height);
  EXPECT_EQ(gt.s_star.back(), 1.0);
}

TEST(GenGrounding, ImpossibleLayoutThrows) {
  const Vocabulary v = Vocabulary::toy();
  ToyConfig cfg;
  cfg.max_pair_iou = 0.0;  // no pair of boxes has IoU below zero, so no scene with two objects can be placed
  cfg.max_retries = 3;
  RngStream rng(1);
  EXPECT_THROW(gen_grounding_sample(rng, cfg, v), std::runtime_error);
}

TEST(Dataset, FileRoundTripIsByteIdentical) {
  const Vocabulary v = Vocabulary::toy();
  const auto dir = std::filesystem::temp_directory_path() / "muan_dataset_test";
  std::filesystem::create_directories(dir);
  for (Task task : {Task::vqa, Task::grounding}) {
    const std::vector<ToySample> data = generate_dataset(task, 25, 9, ToyConfig{}, v);
    write_dataset(dir / "a.jsonl", data);
    const std::vector<ToySample> back = read_dataset(dir / "a.jsonl");
    ASSERT_EQ(back.size(), data.size());
    write_dataset(dir / "b.jsonl", back);
    EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  }
  std::ofstream(dir / "bad.jsonl") << "{\"version\":1}\n";
  EXPECT_THROW(read_dataset(dir / "bad.jsonl"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, VocabularyFileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "muan_vocab_test.txt";
  Vocabulary::toy().save(path);
  EXPECT_EQ(Vocabulary::load(path).words(), Vocabulary::toy().words());
  std::filesystem::remove(path);
}

TEST(SpatialFeature, FullCanvasAndCenteredQuarter) {
  auto full = spatial_feature(Box{0, 0, 100, 100}, 100, 100);
  EXPECT_EQ(full, (std::array<double, 5>{0, 0, 1, 1, 1}));
  auto center = spatial_feature(Box{25, 25, 75, 75}, 100, 100);
  EXPECT_EQ(center, (std::array<double, 5>{0.25, 0.25, 0.75, 0.75, 0.25}));
}

TEST(Encoders, ReferenceTextLengths) {
  EXPECT_EQ(MuanConfig::toy_profile(Task::vqa).m_max, 14u);
  EXPECT_EQ(MuanConfig::toy_profile(Task::grounding).m_max, 15u);
  const std::vector<std::size_t> words(20, 5);
  EXPECT_EQ(prepare_tokens(words, Task::vqa, 14, false).size(), 15u);  // [ans] + 14 words
  EXPECT_EQ(prepare_tokens(words, Task::grounding, 15, false).size(), 15u);
  const std::vector<std::size_t> few = {7, 8};
  std::vector<std::size_t> padded = prepare_tokens(few, Task::vqa, 14, true);
  EXPECT_EQ(padded.size(), 15u);
  EXPECT_EQ(padded[0], Vocabulary::kAns);
  EXPECT_EQ(padded.back(), Vocabulary::kPad);
}

TEST(Encoders, AllPadTextGivesZeroRowsAndNoValidPositions) {
  ParameterSet ps;
  register_encoder(ps, Task::vqa, Vocabulary::toy().size(), 8, 16, 12, RngStream(2));
  Tape tape;
  Binder bind(tape, ps);
  const std::vector<std::size_t> ids(6, Vocabulary::kPad);
  TextEncoding enc = encode_text(ids, bind_encoder(bind));
  EXPECT_EQ(enc.features.value().shape(), (Shape{6, 16}));
  for (double x : enc.features.value().values()) EXPECT_EQ(x, 0.0);
  for (bool b : enc.valid) EXPECT_FALSE(b);
}

TEST(Encoders, PadEmbeddingRowIsZero) {
  ParameterSet ps;
  register_encoder(ps, Task::grounding, 30, 8, 16, 12, RngStream(3));
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(ps.value("enc.embedding").at(0, c), 0.0);
  EXPECT_TRUE(ps.contains("enc.spatial.w"));
}

TEST(Encoders, GroundingRowsPadToHundred) {
  const Vocabulary v = Vocabulary::toy();
  RngStream rng(6);
  ToySample s = gen_grounding_sample(rng, ToyConfig{}, v);
  VisualInput in = scene_inputs(s.scene, Task::grounding, MuanConfig::toy_profile(Task::grounding).n_max);
  EXPECT_EQ(in.appearance.rows(), 100u);
  EXPECT_EQ(in.valid.size(), 100u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(in.valid.begin(), in.valid.end(), true)), s.scene.proposals.size());
}
