#include <gtest/gtest.h>

#include "omnigf/prompt/prompt.hpp"
#include "omnigf/scene/synthetic.hpp"
#include "testutil.hpp"

using namespace omnigf;

namespace {

Scene two_person_scene(int side = 448) {
  Scene s;
  s.width = s.height = side;
  s.image = Raster(side, side);
  PersonAnnotation a;
  a.head_box = {112, 112, 224, 224};
  a.gaze_status = GazeStatus::Inside;
  a.targets = {{0.5, 0.25}};
  a.category = "cup";
  PersonAnnotation b;
  b.head_box = {0, 0, static_cast<double>(side), static_cast<double>(side)};
  b.gaze_status = GazeStatus::Outside;
  s.persons = {a, b};
  return s;
}

}  // namespace

TEST(PromptBuild, CoordinateScaling) {
  auto s = two_person_scene();
  EXPECT_EQ(person_entry_text(s, 0),
            "P0: <|gaze_pad|> {\"bbox_2d\": [250, 250, 500, 500]}");
  // full-image box clamps to [0, 999]
  EXPECT_EQ(person_entry_text(s, 1), "P1: <|gaze_pad|> {\"bbox_2d\": [0, 0, 999, 999]}");
}

TEST(PromptBuild, PlaceholderIndicesOrderedAndTagged) {
  auto s = two_person_scene();
  auto plan = build_prompt(s, TaskMode::Localize);
  ASSERT_EQ(plan.gaze_pad_index.size(), 2u);
  EXPECT_LT(plan.gaze_pad_index[0], plan.gaze_pad_index[1]);
  for (int g : plan.gaze_pad_index) EXPECT_EQ(plan.token_ids[g], Tokenizer::kGazePadId);
  // spans cover each person's entry
  for (size_t i = 0; i < plan.person_slot_spans.size(); ++i) {
    EXPECT_GE(plan.gaze_pad_index[i], plan.person_slot_spans[i].first);
    EXPECT_LT(plan.gaze_pad_index[i], plan.person_slot_spans[i].second);
  }
}

TEST(PromptBuild, TokenizerRoundTripOnPrompt) {
  auto s = two_person_scene();
  for (auto mode : {TaskMode::Localize, TaskMode::LocalizeSemantic}) {
    auto plan = build_prompt(s, mode);
    const auto text = Tokenizer::decode(plan.token_ids);
    EXPECT_EQ(Tokenizer::encode(text), plan.token_ids);
  }
}

TEST(PromptBuild, EmptySceneRejected) {
  Scene s;
  s.width = s.height = 4;
  EXPECT_THROW(build_prompt(s, TaskMode::Localize), std::invalid_argument);
}

TEST(SystemPrompts, PinnedHashes) {
  // Versioned text assets; any edit must fail this test.
  EXPECT_EQ(kSystemPromptVersion, 1);
  EXPECT_EQ(fnv1a64(std::string(kSystemPromptLocalize)), 0x4ce2efe0dc9f6119ULL);
  EXPECT_EQ(fnv1a64(std::string(kSystemPromptSemantic)), 0xe24776149e6144cfULL);
}

TEST(SerializeTargets, OutsideRecordText) {
  auto s = two_person_scene();
  EXPECT_EQ(person_target_text(s.persons[1], TaskMode::Localize, 1),
            "P1: {\"status\": \"outside\"}");
}

TEST(SerializeTargets, PointScaling) {
  auto s = two_person_scene();
  EXPECT_EQ(person_target_text(s.persons[0], TaskMode::Localize, 0),
            "P0: {\"status\": \"inside\", \"point_2d\": [500, 250]}");
  EXPECT_EQ(person_target_text(s.persons[0], TaskMode::LocalizeSemantic, 0),
            "P0: {\"status\": \"inside\", \"point_2d\": [500, 250], \"category\": \"cup\"}");
}

TEST(SerializeTargets, UnknownPersonFullyMasked) {
  auto s = two_person_scene();
  s.persons[1].gaze_status = GazeStatus::Unknown;
  auto enc = serialize_targets(s, TaskMode::Localize);
  const auto [lo, hi] = enc.person_spans[1];
  for (int t = lo; t < hi; ++t) EXPECT_EQ(enc.loss_mask[t], 0.0);
  // mask sum equals the token count of non-unknown person targets, exactly
  double sum = 0;
  for (double w : enc.loss_mask) sum += w;
  EXPECT_EQ(sum, static_cast<double>(enc.person_spans[0].second - enc.person_spans[0].first));
  EXPECT_EQ(enc.eos_weight, 1.0);  // a known person exists
  // the dummy record is the plain outside record
  const auto text = Tokenizer::decode(enc.token_ids);
  EXPECT_NE(text.find("P1: {\"status\": \"outside\"}"), std::string::npos);

  // all persons unknown: nothing supervised at all
  Scene all_unknown = s;
  for (auto& p : all_unknown.persons) {
    p.gaze_status = GazeStatus::Unknown;
    p.targets.clear();
  }
  auto enc2 = serialize_targets(all_unknown, TaskMode::Localize);
  EXPECT_EQ(enc2.eos_weight, 0.0);
  for (double w : supervision_weights<double>(enc2)) EXPECT_EQ(w, 0.0);
}

TEST(SerializeTargets, InsideWithoutTargetRejected) {
  PersonAnnotation p;
  p.head_box = {0, 0, 8, 8};
  p.gaze_status = GazeStatus::Inside;
  EXPECT_THROW(person_target_text(p, TaskMode::Localize, 0), std::invalid_argument);
}

TEST(ParseOutput, BasicRecords) {
  auto recs = parse_output("P0: {\"status\": \"inside\", \"point_2d\": [500, 250]}\n"
                           "P1: {\"status\": \"outside\"}\n");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_TRUE(recs[0].valid);
  EXPECT_EQ(recs[0].status, GazeStatus::Inside);
  ASSERT_TRUE(recs[0].point.has_value());
  EXPECT_DOUBLE_EQ(recs[0].point->x, 0.5);
  EXPECT_DOUBLE_EQ(recs[0].point->y, 0.25);
  EXPECT_FALSE(recs[0].category.has_value());
  EXPECT_TRUE(recs[1].valid);
  EXPECT_EQ(recs[1].status, GazeStatus::Outside);
  EXPECT_FALSE(recs[1].point.has_value());
  EXPECT_EQ(recs[0].anchor_index, 0);
  EXPECT_EQ(recs[1].anchor_index, 49);
}

TEST(ParseOutput, MalformedBlockDegradesPerPerson) {
  auto recs = parse_output("P0: {\"status\": \"inside\", \"point_2d\": [1\n"
                           "P1: {\"status\": \"outside\"}\n");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_FALSE(recs[0].valid);
  EXPECT_EQ(recs[0].status, GazeStatus::Outside);  // fallback
  EXPECT_FALSE(recs[0].note.empty());
  EXPECT_TRUE(recs[1].valid);
}

TEST(ParseOutput, GarbageNeverThrows) {
  EXPECT_NO_THROW(parse_output(""));
  EXPECT_NO_THROW(parse_output("PPPP::::P7"));
  EXPECT_NO_THROW(parse_output("P0:"));
  EXPECT_NO_THROW(parse_output(std::string(1000, 'P')));
}

TEST(RoundTrip, ParseRenderIdentityRandomized) {
  Rng rng(31);
  const std::vector<std::string> cats{"cup", "red ball", "laptop", "person"};
  for (int it = 0; it < 500; ++it) {
    std::vector<PersonOutputRecord> recs;
    const int n = rng.uniform_int(1, 4);
    for (int i = 0; i < n; ++i) {
      PersonOutputRecord r;
      r.person_index = i;
      if (rng.bernoulli(0.6)) {
        r.status = GazeStatus::Inside;
        r.point = Point{rng.uniform_int(0, 999) / 1000.0, rng.uniform_int(0, 999) / 1000.0};
        if (rng.bernoulli(0.5)) r.category = cats[static_cast<size_t>(rng.uniform_int(0, 3))];
      } else {
        r.status = GazeStatus::Outside;
      }
      recs.push_back(r);
    }
    const auto parsed = parse_output(render_records(recs));
    ASSERT_EQ(parsed.size(), recs.size());
    for (size_t i = 0; i < recs.size(); ++i) {
      EXPECT_TRUE(parsed[i].valid);
      EXPECT_EQ(parsed[i].person_index, recs[i].person_index);
      EXPECT_EQ(parsed[i].status, recs[i].status);
      EXPECT_EQ(parsed[i].category, recs[i].category);
      if (recs[i].point) {
        ASSERT_TRUE(parsed[i].point.has_value());
        EXPECT_DOUBLE_EQ(parsed[i].point->x, recs[i].point->x);
        EXPECT_DOUBLE_EQ(parsed[i].point->y, recs[i].point->y);
      }
    }
  }
}

TEST(RoundTrip, SerializeThenParseOnScenes) {
  SynthConfig cfg;
  cfg.side = 64;
  cfg.unknown_prob = 0.2;
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    auto s = generate_synthetic_scene(seed, cfg);
    auto enc = serialize_targets(s, TaskMode::LocalizeSemantic);
    auto recs = parse_output(Tokenizer::decode(enc.token_ids));
    ASSERT_EQ(recs.size(), s.persons.size());
    for (size_t i = 0; i < s.persons.size(); ++i) {
      EXPECT_TRUE(recs[i].valid);
      // anchors recorded by the serializer equal the parsed block starts
      EXPECT_EQ(recs[i].anchor_index, enc.anchor_offsets[i]);
      if (s.persons[i].gaze_status == GazeStatus::Inside) {
        EXPECT_EQ(recs[i].status, GazeStatus::Inside);
        EXPECT_EQ(recs[i].category, s.persons[i].category);
      } else {
        EXPECT_EQ(recs[i].status, GazeStatus::Outside);  // incl. masked dummy
      }
    }
  }
}
