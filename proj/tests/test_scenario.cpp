#include "doctest.h"

#include <cmath>
#include <numeric>
#include <sstream>

#include "p2pgrid/errors.hpp"
#include "p2pgrid/scenario.hpp"

using namespace p2pgrid;

namespace {

std::string csv(std::size_t agents, std::size_t hours, std::size_t skip_hour = 1000) {
  std::ostringstream out;
  out << "timestamp,agent_id,load_kwh,pv_kw\n";
  for (std::size_t h = 0; h < hours; ++h) {
    if (h == skip_hour) continue;
    for (std::size_t a = 0; a < agents; ++a) {
      char line[96];
      std::snprintf(line, sizeof line, "2017-06-01T%02zu:00:00,a%zu,%.3f,%.3f\n", h, a,
                    0.5 + 0.1 * double(a), h >= 7 && h <= 17 ? 2.0 : 0.0);
      out << line;
    }
  }
  return out.str();
}

ProfileSet parse(const std::string& text) {
  std::istringstream in(text);
  return parse_profiles(in, "mem.csv");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const DomainError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("well-formed profile file") {
  const auto p = parse(csv(2, 24));
  CHECK(p.agent_ids == std::vector<std::string>{"a0", "a1"});
  CHECK(p.hours() == 24);
  CHECK(p.load[1][3] == doctest::Approx(0.6));
  CHECK(p.pv[0][12] == 2.0);
  CHECK(format_timestamp(p.start) == "2017-06-01T00:00:00");
  CHECK(format_timestamp(p.time_at(23)) == "2017-06-01T23:00:00");
}

TEST_CASE("profile errors name the line") {
  auto text = csv(2, 24);
  const auto at = text.find("0.600", text.find("T05:00"));
  text.replace(at, 5, "-0.60");
  const auto negative = error_of(text);
  CHECK(negative.find("mem.csv:13:") == 0);
  CHECK(negative.find("negative load_kwh") != std::string::npos);

  const auto gap = error_of(csv(2, 24, 13));
  CHECK(gap.find("mem.csv:28:") == 0);
  CHECK(gap.find("gap") != std::string::npos);
  CHECK(gap.find("2017-06-01T13:00:00") != std::string::npos);

  CHECK(error_of("time,agent,load,pv\n").find("header") != std::string::npos);
  CHECK(error_of("timestamp,agent_id,load_kwh,pv_kw\n").find("no data") != std::string::npos);
  CHECK(error_of("timestamp,agent_id,load_kwh,pv_kw\n2017-06-01T00:00:00,a,1\n")
            .find("expected 4 fields") != std::string::npos);
  CHECK(error_of("timestamp,agent_id,load_kwh,pv_kw\n2017-06-01T00:30:00,a,1,0\n")
            .find("on the hour") != std::string::npos);
  CHECK(error_of("timestamp,agent_id,load_kwh,pv_kw\n2017-02-30T00:00:00,a,1,0\n")
            .find("valid date") != std::string::npos);
  CHECK(error_of("timestamp,agent_id,load_kwh,pv_kw\n2017-06-01T00:00:00,a,x,0\n")
            .find("invalid load_kwh") != std::string::npos);
  // Unsorted agents and an hour missing one agent.
  CHECK(error_of("timestamp,agent_id,load_kwh,pv_kw\n2017-06-01T00:00:00,b,1,0\n"
                 "2017-06-01T00:00:00,a,1,0\n")
            .find("out of order") != std::string::npos);
  CHECK(error_of("timestamp,agent_id,load_kwh,pv_kw\n2017-06-01T00:00:00,a,1,0\n"
                 "2017-06-01T00:00:00,b,1,0\n2017-06-01T01:00:00,a,1,0\n")
            .find("lists 1 agents") != std::string::npos);
  CHECK_THROWS_AS(load_profiles("/nonexistent/profiles.csv"), IoError);
}

TEST_CASE("timestamps") {
  CHECK(format_timestamp(parse_timestamp("2016-02-29T23:00:00Z")) == "2016-02-29T23:00:00");
  CHECK_THROWS_AS(parse_timestamp("2017-06-01 00:00:00"), DomainError);
  CHECK_THROWS_AS(parse_timestamp("2017-06-01T24:00:00"), DomainError);
}

TEST_CASE("synthetic profiles round-trip through CSV") {
  SyntheticOptions opt;
  opt.agents = 12;
  opt.hours = 72;
  opt.start_hour = 24 * 150;
  opt.seed = 9;
  const auto p = generate_profiles(opt);
  CHECK(p.agent_ids.front() == "h00");
  CHECK(format_timestamp(p.start) == "2017-05-31T00:00:00");
  for (std::size_t a = 0; a < opt.agents; ++a)
    for (std::size_t h = 0; h < opt.hours; ++h) {
      CHECK(p.load[a][h] > 0.0);
      CHECK(p.pv[a][h] >= 0.0);
    }
  // No PV at night, some at noon.
  CHECK(p.pv[0][2] == 0.0);
  CHECK(p.pv[0][12] > 0.0);
  std::ostringstream out;
  write_profiles(out, p);
  const auto back = parse(out.str());
  CHECK(back.agent_ids == p.agent_ids);
  CHECK(back.load == p.load);
  CHECK(back.pv == p.pv);
  CHECK(back.start == p.start);

  std::ostringstream again;
  write_profiles(again, generate_profiles(opt));
  CHECK(again.str() == out.str());
}

TEST_CASE("price bands") {
  CHECK(band_price(0) == 0.10);
  CHECK(band_price(10) == 0.10);
  CHECK(band_price(11) == 0.15);
  CHECK(band_price(15) == 0.15);
  CHECK(band_price(16) == 0.30);
  CHECK(band_price(20) == 0.30);
  CHECK(band_price(21) == 0.10);
  CHECK(band_price(23) == 0.10);
}

TEST_CASE("scenario generation") {
  SyntheticOptions opt;
  opt.agents = 8;
  opt.hours = 48;
  const auto p = generate_profiles(opt);
  ScenarioRecipe r;
  r.agents = 5;
  r.horizon = 24;
  r.start = 6;
  r.elasticity_lo = -3.0;
  r.elasticity_hi = -2.0;
  r.total_battery = 40.0;
  r.battery_power = 5.0;
  r.seed = 3;
  const auto sc = generate_scenario(p, r);
  CHECK_NOTHROW(validate(sc));
  REQUIRE(sc.agents.size() == 5);
  CHECK(sc.horizon == 24);
  CHECK(sc.dt == 1.0);

  double pv = 0.0, load = 0.0, cap = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& a = sc.agents[i];
    CHECK(a.id == p.agent_ids[i]);
    const double e = a.utility[0].r_hat;
    CHECK(e >= -3.0);
    CHECK(e <= -2.0);
    for (std::size_t t = 0; t < 24; ++t) {
      CHECK(a.utility[t].r_hat == e);
      CHECK(a.utility[t].d0 == p.load[i][t + 6]);
      CHECK(a.utility[t].pi0 == band_price(int((t + 6) % 24)));
      pv += a.solar[t];
      load += p.load[i][t + 6];
    }
    const auto& b = std::get<IdealBattery>(*a.battery);
    CHECK(b.s_max >= 0.0);
    CHECK(b.s0 == 0.5 * b.s_max);
    CHECK(b.p_max == 5.0);
    cap += b.s_max;
  }
  CHECK(std::abs(pv - load) <= 1e-9);
  CHECK(std::abs(cap - 40.0) <= 1e-9);

  // Same seed, same scenario.
  const auto again = generate_scenario(p, r);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(again.agents[i].solar == sc.agents[i].solar);
    CHECK(again.agents[i].utility[3].r_prime == sc.agents[i].utility[3].r_prime);
    CHECK(std::get<IdealBattery>(*again.agents[i].battery).s_max ==
          std::get<IdealBattery>(*sc.agents[i].battery).s_max);
  }
  r.seed = 4;
  CHECK(generate_scenario(p, r).agents[0].utility[0].r_hat != sc.agents[0].utility[0].r_hat);
}

TEST_CASE("scenario options and errors") {
  SyntheticOptions opt;
  opt.agents = 4;
  opt.hours = 24;
  const auto p = generate_profiles(opt);
  ScenarioRecipe r;
  r.price_mode = PriceMode::kFlat;
  r.flat_price = 0.2;
  r.pv_scaling = PvScaling::kNone;
  r.agent_rows = {3, 1};
  const auto sc = generate_scenario(p, r);
  CHECK(sc.agents[0].id == p.agent_ids[3]);
  CHECK(sc.agents[1].solar == p.pv[1]);
  CHECK(sc.agents[0].utility[17].pi0 == 0.2);
  CHECK_FALSE(sc.agents[0].battery.has_value());

  // A night window has no PV to scale.
  r = {};
  r.horizon = 3;
  const auto night = generate_scenario(p, r);
  CHECK(night.agents[0].solar == std::vector<double>(3, 0.0));

  r = {};
  r.start = 1;
  CHECK_THROWS_AS(generate_scenario(p, r), DomainError);
  r = {};
  r.agent_rows = {0, 9};
  CHECK_THROWS_AS(generate_scenario(p, r), DomainError);
  r = {};
  r.agent_rows = {1, 1};
  CHECK_THROWS_AS(generate_scenario(p, r), DomainError);
  r = {};
  r.elasticity_lo = -1.0;
  r.elasticity_hi = -2.0;
  CHECK_THROWS_AS(validate(r), DomainError);
  r = {};
  r.elasticity_hi = 0.0;
  CHECK_THROWS_AS(validate(r), DomainError);
  r = {};
  r.agents = 1;
  CHECK_THROWS_AS(validate(r), DomainError);
  r = {};
  r.total_battery = 5.0;
  CHECK_THROWS_AS(validate(r), DomainError);
  CHECK(parse_price_mode(to_string(PriceMode::kFlat)) == PriceMode::kFlat);
  CHECK(parse_pv_scaling("match-load") == PvScaling::kMatchLoad);
  CHECK_THROWS_AS(parse_price_mode("bands"), DomainError);
}

TEST_CASE("derived seeds") {
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}
