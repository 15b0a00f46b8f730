#include <gtest/gtest.h>

#include <cstring>

#include "dpc/render.hpp"

using namespace dpc;

TEST(Render, BitIdenticalAcrossCalls) {
  CategoryTable table = CategoryTable::builtin();
  SceneState st = sample_scene(table, 2, 808);
  Observation a = render(st);
  Observation b = render(st);
  ASSERT_EQ(a.occupancy.size(), b.occupancy.size());
  EXPECT_EQ(0, std::memcmp(a.occupancy.data(), b.occupancy.data(), a.occupancy.size()));
  EXPECT_EQ(0, std::memcmp(a.movable_mask.data(), b.movable_mask.data(), a.movable_mask.size()));
  EXPECT_EQ(0, std::memcmp(a.depth.data(), b.depth.data(), a.depth.size() * sizeof(double)));
}

TEST(Render, ChannelInvariants) {
  CategoryTable table = CategoryTable::builtin();
  for (int s = 0; s < 60; ++s) {
    SceneState st = sample_scene(table, s % 12, 6100 + s);
    Observation obs = render(st);
    int mask_count = 0;
    for (int i = 0; i < obs.width * obs.height; ++i) {
      // mask subset of occupancy
      if (obs.movable_mask[i]) EXPECT_TRUE(obs.occupancy[i]);
      // depth defined exactly where occupied
      if (obs.occupancy[i]) {
        EXPECT_GE(obs.depth[i], 0.0);
        EXPECT_LE(obs.depth[i], 1.0);
      } else {
        EXPECT_EQ(obs.depth[i], -1.0);
      }
      mask_count += obs.movable_mask[i];
    }
    // the movable panel is visible in every admissible scene
    EXPECT_GT(mask_count, 10);
  }
}

TEST(Render, AffordanceOracleSubsetOfMask) {
  CategoryTable table = CategoryTable::builtin();
  for (int s = 0; s < 30; ++s) {
    SceneState st = sample_scene(table, s % 12, 6900 + s);
    Observation obs = render(st);
    auto aff = affordance_oracle(st);
    int aff_count = 0;
    for (int i = 0; i < obs.width * obs.height; ++i) {
      if (aff[i]) EXPECT_TRUE(obs.movable_mask[i]);
      aff_count += aff[i];
    }
    EXPECT_GT(aff_count, 0);
  }
}

// mask pixel count tracks the analytically projected panel area over a joint
// sweep: counts match the quad area within a perimeter-sized rasterization
// bound, and move in the same direction whenever the area change is clear
TEST(Render, MaskCountTracksProjectedAreaOracle) {
  CategoryTable table = CategoryTable::builtin();
  for (int cat : {0, 1, 2, 3}) {
    SceneState st = sample_scene(table, cat, 505 + cat);
    const CameraModel cam = make_camera(st.spec.camera, 64, 64);
    double prev_area = -1.0;
    int prev_count = -1;
    for (int k = 0; k <= 8; ++k) {
      st.q = st.spec.q_min + (st.spec.q_max - st.spec.q_min) * k / 8.0;
      Observation obs = render(st);
      int count = 0;
      for (auto m : obs.movable_mask) count += m;

      // shoelace area of the projected corner quad, in pixels
      double px[4], py[4];
      int i = 0;
      for (auto [u, v] : {std::pair{0.0, 0.0}, {st.spec.panel_w, 0.0},
                          {st.spec.panel_w, st.spec.panel_h}, {0.0, st.spec.panel_h}}) {
        auto pr = cam.project(panel_point_world(st.spec, st.q, u, v));
        ASSERT_TRUE(pr.has_value());
        px[i] = pr->col;
        py[i] = pr->row;
        ++i;
      }
      double area = 0.0;
      for (int j = 0; j < 4; ++j) {
        const int j2 = (j + 1) % 4;
        area += px[j] * py[j2] - px[j2] * py[j];
      }
      area = std::fabs(area) / 2.0;
      double perim = 0.0;
      for (int j = 0; j < 4; ++j) {
        const int j2 = (j + 1) % 4;
        perim += std::hypot(px[j2] - px[j], py[j2] - py[j]);
      }
      EXPECT_NEAR(count, area, perim + 4.0);
      if (prev_area >= 0.0 && std::fabs(area - prev_area) > 2.0 * (perim + 4.0)) {
        EXPECT_EQ(count > prev_count, area > prev_area);
      }
      prev_area = area;
      prev_count = count;
    }
  }
}

// revolute normals compose: normal(q + d) == rotate(normal(q), axis, d)
TEST(Render, NormalOracleRotationComposition) {
  CategoryTable table = CategoryTable::builtin();
  for (int cat : {0, 1, 2, 3, 6, 7}) {
    SceneState st = sample_scene(table, cat, 99 + cat);
    for (double d : {0.1, 0.37, 0.9}) {
      SceneState st2 = st;
      st2.q = st.q + d;
      Vec3 expect = rotate_about_axis(normal_oracle(st), hinge_axis(st.spec), d);
      Vec3 got = normal_oracle(st2);
      EXPECT_NEAR(norm(got - expect), 0.0, 1e-12);
    }
  }
  // prismatic normal constant in q
  SceneState dr = sample_scene(table, 4, 17);
  Vec3 n0 = normal_oracle(dr);
  dr.q += 0.3;
  EXPECT_NEAR(norm(normal_oracle(dr) - n0), 0.0, 1e-15);
}

TEST(Render, ProjectUnprojectConsistent) {
  CategoryTable table = CategoryTable::builtin();
  SceneState st = sample_scene(table, 5, 321);
  const CameraModel cam = make_camera(st.spec.camera, 64, 64);
  // a pixel-center ray point projects back onto the same pixel center
  for (int r = 5; r < 64; r += 13) {
    for (int c = 3; c < 64; c += 11) {
      Vec3 p = cam.unproject(r, c, 5.0);
      auto pr = cam.project(p);
      ASSERT_TRUE(pr.has_value());
      EXPECT_NEAR(pr->row, r, 1e-6);
      EXPECT_NEAR(pr->col, c, 1e-6);
      EXPECT_NEAR(pr->t, 5.0, 1e-9);
    }
  }
}
