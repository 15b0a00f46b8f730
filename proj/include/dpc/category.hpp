#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpc/errors.hpp"

namespace dpc {

enum class JointKind { Revolute, Prismatic };
enum class HingeSide { Left, Right, Bottom, Top, Out };  // Out = prismatic pull axis

inline std::string to_string(JointKind k) {
  return k == JointKind::Revolute ? "revolute" : "prismatic";
}

inline std::string to_string(HingeSide s) {
  switch (s) {
    case HingeSide::Left: return "left";
    case HingeSide::Right: return "right";
    case HingeSide::Bottom: return "bottom";
    case HingeSide::Top: return "top";
    default: return "out";
  }
}

// One articulated-panel template. Panels are rectangles in a static frame;
// per-scene geometry is drawn from the ranges below. Affordance placement is
// given in unit panel coordinates (u right, v up, both in [0,1]).
struct CategorySpec {
  int id = 0;
  std::string name;
  bool seen = true;
  JointKind joint = JointKind::Revolute;
  HingeSide hinge = HingeSide::Left;
  double panel_w_lo = 0.9, panel_w_hi = 1.0;
  double panel_h_lo = 0.9, panel_h_hi = 1.0;
  double aff_cu = 0.5, aff_cv = 0.5;    // affordance center, unit coords
  double aff_su = 0.28, aff_sv = 0.28;  // affordance size, world units
  double aff_jitter = 0.03;             // per-scene center jitter, unit coords
  double q_min = 0.0, q_max = 1.2;
};

struct CategoryTable {
  std::vector<CategorySpec> categories;

  const CategorySpec& at(int id) const {
    for (const auto& c : categories)
      if (c.id == id) return c;
    throw UnknownCategory("category id " + std::to_string(id) + " not in table");
  }

  std::vector<int> ids(bool seen) const {
    std::vector<int> out;
    for (const auto& c : categories)
      if (c.seen == seen) out.push_back(c.id);
    return out;
  }

  // The default 12-template table: 8 seen, 4 unseen. Two templates (one per
  // split) place the affordance close to the hinge; there the peak-score
  // contact alone cannot clear the success threshold and candidate
  // re-ranking is required.
  static CategoryTable builtin();
};

inline CategoryTable CategoryTable::builtin() {
  CategoryTable t;
  auto rev = [](int id, const std::string& name, bool seen, HingeSide side, double wl, double wh,
                double hl, double hh, double cu, double cv, double su, double sv) {
    CategorySpec c;
    c.id = id; c.name = name; c.seen = seen;
    c.joint = JointKind::Revolute; c.hinge = side;
    c.panel_w_lo = wl; c.panel_w_hi = wh; c.panel_h_lo = hl; c.panel_h_hi = hh;
    c.aff_cu = cu; c.aff_cv = cv; c.aff_su = su; c.aff_sv = sv;
    c.q_min = 0.0; c.q_max = 1.2;
    return c;
  };
  auto pri = [](int id, const std::string& name, bool seen, double wl, double wh, double hl,
                double hh, double cu, double cv, double su, double sv) {
    CategorySpec c;
    c.id = id; c.name = name; c.seen = seen;
    c.joint = JointKind::Prismatic; c.hinge = HingeSide::Out;
    c.panel_w_lo = wl; c.panel_w_hi = wh; c.panel_h_lo = hl; c.panel_h_hi = hh;
    c.aff_cu = cu; c.aff_cv = cv; c.aff_su = su; c.aff_sv = sv;
    c.q_min = 0.0; c.q_max = 0.5;
    return c;
  };
  t.categories.push_back(rev(0, "cab_left_a", true, HingeSide::Left, 0.85, 0.95, 0.95, 1.05, 0.78, 0.50, 0.28, 0.30));
  t.categories.push_back(rev(1, "cab_right_a", true, HingeSide::Right, 0.95, 1.05, 0.85, 0.95, 0.25, 0.55, 0.30, 0.26));
  t.categories.push_back(rev(2, "lid_top_a", true, HingeSide::Top, 1.00, 1.10, 0.80, 0.90, 0.50, 0.20, 0.30, 0.26));
  t.categories.push_back(rev(3, "hatch_bottom_a", true, HingeSide::Bottom, 0.90, 1.00, 0.90, 1.00, 0.45, 0.80, 0.28, 0.28));
  t.categories.push_back(pri(4, "drawer_a", true, 0.90, 1.00, 0.60, 0.70, 0.50, 0.50, 0.32, 0.24));
  t.categories.push_back(pri(5, "drawer_b", true, 0.70, 0.80, 0.80, 0.90, 0.30, 0.35, 0.26, 0.26));
  t.categories.push_back(rev(6, "cab_left_b", true, HingeSide::Left, 1.00, 1.10, 0.90, 1.00, 0.66, 0.32, 0.26, 0.26));
  // near-hinge affordance, seen split
  {
    CategorySpec c = rev(7, "vent_near_a", true, HingeSide::Left, 1.10, 1.20, 0.70, 0.80, 0.0, 0.50, 0.32, 0.30);
    // center chosen so the peak-score pixel stays under the lever floor
    c.aff_cu = 0.182 / 1.15;  // ~0.158 lever at the rect center
    c.aff_jitter = 0.0;
    t.categories.push_back(c);
  }
  t.categories.push_back(rev(8, "cab_right_u", false, HingeSide::Right, 0.80, 0.90, 1.00, 1.10, 0.30, 0.30, 0.28, 0.28));
  t.categories.push_back(pri(9, "drawer_u", false, 0.80, 0.90, 0.70, 0.80, 0.62, 0.58, 0.28, 0.26));
  t.categories.push_back(rev(10, "lid_top_u", false, HingeSide::Top, 0.90, 1.00, 0.85, 0.95, 0.35, 0.25, 0.26, 0.28));
  // near-hinge affordance, unseen split
  {
    CategorySpec c = rev(11, "vent_near_u", false, HingeSide::Bottom, 1.00, 1.10, 0.75, 0.85, 0.50, 0.0, 0.30, 0.32);
    c.aff_cv = 0.166 / 0.80;
    c.aff_jitter = 0.0;
    t.categories.push_back(c);
  }
  return t;
}

// --- JSON round trip --------------------------------------------------------

inline nlohmann::ordered_json to_json(const CategorySpec& c) {
  nlohmann::ordered_json j;
  j["id"] = c.id;
  j["name"] = c.name;
  j["split"] = c.seen ? "seen" : "unseen";
  j["joint"] = to_string(c.joint);
  j["hinge"] = to_string(c.hinge);
  j["panel_w"] = {c.panel_w_lo, c.panel_w_hi};
  j["panel_h"] = {c.panel_h_lo, c.panel_h_hi};
  j["affordance_center"] = {c.aff_cu, c.aff_cv};
  j["affordance_size"] = {c.aff_su, c.aff_sv};
  j["affordance_jitter"] = c.aff_jitter;
  j["q_range"] = {c.q_min, c.q_max};
  return j;
}

inline CategorySpec category_from_json(const nlohmann::json& j) {
  CategorySpec c;
  c.id = j.at("id").get<int>();
  c.name = j.at("name").get<std::string>();
  c.seen = j.at("split").get<std::string>() == "seen";
  const std::string joint = j.at("joint").get<std::string>();
  c.joint = joint == "revolute" ? JointKind::Revolute : JointKind::Prismatic;
  const std::string hinge = j.at("hinge").get<std::string>();
  c.hinge = hinge == "left"     ? HingeSide::Left
            : hinge == "right"  ? HingeSide::Right
            : hinge == "bottom" ? HingeSide::Bottom
            : hinge == "top"    ? HingeSide::Top
                                : HingeSide::Out;
  c.panel_w_lo = j.at("panel_w")[0].get<double>();
  c.panel_w_hi = j.at("panel_w")[1].get<double>();
  c.panel_h_lo = j.at("panel_h")[0].get<double>();
  c.panel_h_hi = j.at("panel_h")[1].get<double>();
  c.aff_cu = j.at("affordance_center")[0].get<double>();
  c.aff_cv = j.at("affordance_center")[1].get<double>();
  c.aff_su = j.at("affordance_size")[0].get<double>();
  c.aff_sv = j.at("affordance_size")[1].get<double>();
  c.aff_jitter = j.at("affordance_jitter").get<double>();
  c.q_min = j.at("q_range")[0].get<double>();
  c.q_max = j.at("q_range")[1].get<double>();
  return c;
}

inline nlohmann::ordered_json to_json(const CategoryTable& t) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& c : t.categories) j.push_back(to_json(c));
  return j;
}

inline CategoryTable category_table_from_json(const nlohmann::json& j) {
  CategoryTable t;
  for (const auto& e : j) t.categories.push_back(category_from_json(e));
  return t;
}

inline CategoryTable load_category_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open category table: " + path);
  nlohmann::json j;
  in >> j;
  return category_table_from_json(j);
}

inline void save_category_table(const CategoryTable& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write category table: " + path);
  out << to_json(t).dump(2) << "\n";
}

}  // namespace dpc
