#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dpc/experts.hpp"

namespace {

using dpc::CandidatePoint;
using dpc::CategoryTable;
using dpc::ExpertFidelity;
using dpc::Rng;
using dpc::SceneState;
using dpc::Vec3;

const CategoryTable& table() {
  static const CategoryTable t = CategoryTable::builtin();
  return t;
}

TEST(Experts, ZeroNoiseTopPointAlwaysInAffordance) {
  int scenes = 0;
  for (int i = 0; i < 500; ++i) {
    const SceneState st = dpc::sample_scene(table(), i % 12, 300000 + i);
    Rng rng(Rng::derive(1, "expert", i));
    const auto [map, cands] = dpc::position_expert(st, ExpertFidelity{}, rng);
    ASSERT_FALSE(cands.empty());
    double u, v;
    dpc::panel_world_to_local(st.spec, st.q, cands.front().world_point, u, v);
    EXPECT_TRUE(st.spec.affordance.contains(u, v))
        << "scene " << i << " category " << st.spec.category_id;
    ++scenes;
  }
  EXPECT_EQ(scenes, 500);
}

TEST(Experts, MapScoresBoundedAndMaskRestricted) {
  const SceneState st = dpc::sample_scene(table(), 0, 7);
  const auto obs = dpc::render(st);
  Rng rng(11);
  const auto map = dpc::position_expert_map(st, obs, ExpertFidelity{}, rng);
  for (int r = 0; r < obs.height; ++r)
    for (int c = 0; c < obs.width; ++c) {
      const double s = map.at(r, c);
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
      if (!obs.movable(r, c)) EXPECT_EQ(s, 0.0);
    }
}

TEST(Experts, MapMassConcentratesOnAffordance) {
  // mean score over the true rect beats the mean over the rest of the panel,
  // which is the equal-area comparison up to pixel count
  for (int i = 0; i < 40; ++i) {
    const SceneState st = dpc::sample_scene(table(), i % 12, 310000 + i);
    const auto obs = dpc::render(st);
    Rng rng(21);
    const auto map = dpc::position_expert_map(st, obs, ExpertFidelity{}, rng);
    const auto aff = dpc::affordance_oracle(st);
    double in_sum = 0, out_sum = 0;
    int in_n = 0, out_n = 0;
    for (int r = 0; r < obs.height; ++r)
      for (int c = 0; c < obs.width; ++c) {
        if (!obs.movable(r, c)) continue;
        if (aff[static_cast<size_t>(r) * obs.width + c]) {
          in_sum += map.at(r, c);
          ++in_n;
        } else {
          out_sum += map.at(r, c);
          ++out_n;
        }
      }
    ASSERT_GT(in_n, 0);
    ASSERT_GT(out_n, 0);
    EXPECT_GT(in_sum / in_n, out_sum / out_n) << "scene " << i;
  }
}

TEST(Experts, FullCorruptionScattersCandidates) {
  // corrupted picks spread over the whole visible panel instead of the bump
  std::set<std::pair<bool, bool>> quadrants;
  int in_rect = 0, total = 0;
  for (int i = 0; i < 60; ++i) {
    const SceneState st = dpc::sample_scene(table(), i % 12, 320000 + i);
    const auto obs = dpc::render(st);
    Rng rng(Rng::derive(5, "corrupt", i));
    ExpertFidelity fid;
    fid.corruption_prob = 1.0;
    const auto [map, cands] = dpc::position_expert(st, obs, fid, rng);
    for (const auto& cand : cands) {
      double u, v;
      dpc::panel_world_to_local(st.spec, st.q, cand.world_point, u, v);
      in_rect += st.spec.affordance.contains(u, v) ? 1 : 0;
      ++total;
      quadrants.insert({u > st.spec.panel_w / 2, v > st.spec.panel_h / 2});
    }
  }
  EXPECT_EQ(quadrants.size(), 4u);
  EXPECT_LT(static_cast<double>(in_rect) / total, 0.5);
  EXPECT_GT(total, 500);
}

TEST(Experts, CandidatesRespectSuppressionRadius) {
  for (int i = 0; i < 30; ++i) {
    const SceneState st = dpc::sample_scene(table(), i % 12, 330000 + i);
    Rng rng(3);
    const auto [map, cands] = dpc::position_expert(st, ExpertFidelity{}, rng);
    EXPECT_LE(cands.size(), 10u);
    for (size_t a = 0; a < cands.size(); ++a)
      for (size_t b = a + 1; b < cands.size(); ++b) {
        const double dr = cands[a].row - cands[b].row;
        const double dc = cands[a].col - cands[b].col;
        EXPECT_GT(dr * dr + dc * dc, 9.0);
      }
  }
}

TEST(Experts, ReasoningReturnsAllSortedWhenAsked) {
  const SceneState st = dpc::sample_scene(table(), 1, 99);
  Rng rng(17);
  const auto [map, cands] = dpc::position_expert(st, ExpertFidelity{}, rng);
  ASSERT_GE(cands.size(), 3u);
  Rng rrng(18);
  const auto picked = dpc::reasoning_expert(cands, st, static_cast<int>(cands.size()),
                                            ExpertFidelity{}, rrng);
  ASSERT_EQ(picked.size(), cands.size());
  auto key = [&](const CandidatePoint& c) {
    double u, v;
    dpc::panel_world_to_local(st.spec, st.q, c.world_point, u, v);
    double lever = 1.0;
    if (st.spec.joint == dpc::JointKind::Revolute)
      lever = std::clamp(dpc::point_line_distance(c.world_point, dpc::hinge_anchor_world(st.spec),
                                                  dpc::hinge_axis(st.spec)) /
                             st.spec.panel_w,
                         dpc::kLeverFloor, 1.0);
    return (st.spec.affordance.contains(u, v) ? 1.0 : 0.0) + lever;
  };
  for (size_t i = 1; i < picked.size(); ++i) EXPECT_GE(key(picked[i - 1]), key(picked[i]) - 1e-12);
}

TEST(Experts, ReasoningPrefersAffordanceMembership) {
  const SceneState st = dpc::sample_scene(table(), 0, 42);
  const auto& r = st.spec.affordance;
  CandidatePoint inside;
  inside.world_point = dpc::panel_point_world(st.spec, st.q, r.cu(), r.cv());
  inside.row = 10;
  inside.col = 10;
  CandidatePoint outside;
  // far corner, high lever but not in the rect
  outside.world_point = dpc::panel_point_world(st.spec, st.q, st.spec.panel_w - 0.03, 0.05);
  outside.row = 40;
  outside.col = 40;
  Rng rng(5);
  const auto picked = dpc::reasoning_expert({outside, inside}, st, 1, ExpertFidelity{}, rng);
  ASSERT_EQ(picked.size(), 1u);
  EXPECT_EQ(picked.front().row, inside.row);
}

TEST(Experts, ReasoningSelectionLiftsMeanAdvance) {
  double base = 0, lifted = 0;
  int n = 0;
  for (int i = 0; i < 500; ++i) {
    const SceneState st = dpc::sample_scene(table(), i % 12, 340000 + i);
    Rng rng(Rng::derive(9, "uplift", i));
    const auto [map, cands] = dpc::position_expert(st, ExpertFidelity{}, rng);
    ASSERT_FALSE(cands.empty());
    const auto picked = dpc::reasoning_expert(cands, st, 3, ExpertFidelity{}, rng);
    ASSERT_FALSE(picked.empty());
    const Vec3 fwd = dpc::normal_oracle(st) * -1.0;
    const auto eval = [&](const CandidatePoint& c) {
      return dpc::interact(st, dpc::make_action_pose(c.world_point, fwd)).delta_q;
    };
    base += eval(cands.front());
    lifted += eval(picked.front());
    ++n;
  }
  EXPECT_GT(lifted / n, base / n);
}

TEST(Experts, RotationMatchesOracleNormal) {
  for (int i = 0; i < 500; ++i) {
    const SceneState st = dpc::sample_scene(table(), i % 12, 350000 + i);
    const auto obs = dpc::render(st);
    Rng rng(Rng::derive(3, "rot", i));
    const auto [map, cands] = dpc::position_expert(st, obs, ExpertFidelity{}, rng);
    ASSERT_FALSE(cands.empty());
    const auto rots = dpc::rotation_expert(cands.front(), st, obs, ExpertFidelity{}, rng);
    ASSERT_EQ(rots.size(), 3u);
    const Vec3 want = dpc::normal_oracle(st) * -1.0;
    EXPECT_LE(dpc::angle_between_deg(rots.front().forward, want), 2.0) << "scene " << i;
    for (const auto& rot : rots) {
      EXPECT_NEAR(dpc::norm(rot.up), 1.0, 1e-9);
      EXPECT_NEAR(dpc::norm(rot.forward), 1.0, 1e-9);
      EXPECT_NEAR(dpc::dot(rot.up, rot.forward), 0.0, 1e-9);
      EXPECT_GE(rot.confidence, 0.0);
      EXPECT_LE(rot.confidence, 1.0);
    }
    EXPECT_GT(rots[0].confidence, rots[1].confidence);
    EXPECT_GT(rots[1].confidence, rots[2].confidence);
  }
}

TEST(Experts, RotationPassesAngleRuleAtZeroFidelity) {
  for (int i = 0; i < 500; ++i) {
    const SceneState st = dpc::sample_scene(table(), i % 12, 360000 + i);
    const auto obs = dpc::render(st);
    Rng rng(Rng::derive(4, "rot30", i));
    const auto [map, cands] = dpc::position_expert(st, obs, ExpertFidelity{}, rng);
    const auto rots = dpc::rotation_expert(cands.front(), st, obs, ExpertFidelity{}, rng);
    const double theta =
        dpc::angle_between_deg(rots.front().forward, dpc::normal_oracle(st) * -1.0);
    EXPECT_LE(theta, dpc::kAngleLimitDeg);
  }
}

TEST(Experts, RotationBoxClippedAtRasterEdge) {
  const SceneState st = dpc::sample_scene(table(), 2, 61);
  const auto obs = dpc::render(st);
  // corner-most movable pixel: the box is clipped but must still fit a plane
  int best_r = -1, best_c = -1;
  for (int r = 0; r < obs.height; ++r)
    for (int c = 0; c < obs.width; ++c)
      if (obs.movable(r, c) && (best_r < 0 || r + c < best_r + best_c)) {
        best_r = r;
        best_c = c;
      }
  ASSERT_GE(best_r, 0);
  CandidatePoint contact;
  contact.row = best_r;
  contact.col = best_c;
  const double t = obs.camera.denormalize_depth(obs.depth_at(best_r, best_c));
  contact.world_point = obs.camera.unproject(best_r, best_c, t);
  Rng rng(8);
  const auto rots = dpc::rotation_expert(contact, st, obs, ExpertFidelity{}, rng);
  EXPECT_EQ(rots.size(), 3u);

  // a box with no surface pixels cannot be fit
  CandidatePoint nowhere;
  nowhere.row = obs.movable(0, 0) ? obs.height - 1 : 0;
  nowhere.col = obs.movable(0, 0) ? obs.width - 1 : 0;
  if (!obs.movable(nowhere.row, nowhere.col)) {
    bool any = false;
    for (int r = std::max(0, nowhere.row - 5); r <= std::min(obs.height - 1, nowhere.row + 5); ++r)
      for (int c = std::max(0, nowhere.col - 5); c <= std::min(obs.width - 1, nowhere.col + 5); ++c)
        any = any || obs.movable(r, c);
    if (!any) {
      Rng rng2(9);
      EXPECT_THROW(dpc::rotation_expert(nowhere, st, obs, ExpertFidelity{}, rng2),
                   dpc::DegeneratePatch);
    }
  }
}

TEST(Experts, ExpertsOnlyActionDeterministic) {
  const SceneState st = dpc::sample_scene(table(), 3, 77);
  Rng a(1234), b(1234);
  const auto pa = dpc::experts_only_action(st, ExpertFidelity{}, a);
  const auto pb = dpc::experts_only_action(st, ExpertFidelity{}, b);
  EXPECT_EQ(pa.position, pb.position);
  EXPECT_EQ(pa.up, pb.up);
  EXPECT_EQ(pa.forward, pb.forward);

  // and it reaches the surface: the pose's ray recovers the contact
  const auto out = dpc::interact(st, pa);
  EXPECT_TRUE(out.contact.has_value());
}

}  // namespace
