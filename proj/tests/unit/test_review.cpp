#include <algorithm>
#include <cmath>
#include <filesystem>
#include <array>
#include <atomic>
#include <map>
#include <set>
#include <thread>

#include "doctest.h"
#include "protoecg/errors.hpp"
#include "protoecg/review.hpp"
#include "protoecg/taxonomy.hpp"
#include "support.hpp"
// after Eigen: <resolv.h> defines a _res macro that clashes with Eigen parameter names
#include "httplib.h"

using namespace protoecg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_log(const std::string& name) {
  auto p = fs::temp_directory_path() / ("protoecg_test_" + name + ".ndjson");
  fs::remove(p);
  return p;
}

ReviewRating rating(const std::string& who, int proto, int rep, int clar) {
  ReviewRating r;
  r.reviewer = who;
  r.prototype = proto;
  r.representativeness = rep;
  r.clarity = clar;
  return r;
}

ReviewRating exclusion(const std::string& who, int proto) {
  ReviewRating r;
  r.reviewer = who;
  r.prototype = proto;
  r.excluded = true;
  return r;
}

// Independent recomputation: latest per (reviewer, prototype), exclusions by anyone drop the
// prototype, normal-approximation interval.
std::map<std::pair<std::string, std::string>, std::array<double, 4>> brute_summary(const std::vector<ReviewRating>& log) {
  std::map<std::pair<std::string, int>, ReviewRating> latest;
  for (const auto& r : log) latest[{r.reviewer, r.prototype}] = r;
  std::set<int> excluded;
  for (const auto& [k, r] : latest)
    if (r.excluded) excluded.insert(k.second);
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (const auto& [k, r] : latest) {
    if (excluded.count(k.second)) continue;
    groups[{k.first, "representativeness"}].push_back(r.representativeness);
    groups[{k.first, "clarity"}].push_back(r.clarity);
  }
  std::map<std::pair<std::string, std::string>, std::array<double, 4>> out;
  for (const auto& [k, v] : groups) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double half = v.size() > 1 ? 1.96 * std::sqrt(ss / (v.size() - 1)) / std::sqrt(double(v.size())) : 0.0;
    out[k] = {mean, mean - half, mean + half, double(v.size())};
  }
  return out;
}

std::vector<PrototypeBank> projected_banks(const std::vector<std::pair<PrototypeKind, std::vector<std::string>>>& spec,
                                           int per_class) {
  std::vector<PrototypeBank> banks;
  std::uint64_t seed = 1;
  for (const auto& [kind, codes] : spec) {
    auto b = PrototypeBank::create(kind, codes, per_class, seed++);
    for (int j = 0; j < b.size(); ++j) b.provenance[j] = Provenance{"src" + std::to_string(j % 3), j % 3, j % b.num_offsets(), b.window};
    banks.push_back(std::move(b));
  }
  return banks;
}

std::vector<std::string> codes_of(Branch b) {
  const auto& tax = LabelTaxonomy::standard();
  std::vector<std::string> out;
  for (int i : tax.branch_indices(b)) out.push_back(tax.code(i));
  return out;
}

}  // namespace

TEST_CASE("rating validation") {
  CHECK_NOTHROW(rating("a", 0, 4, 5).validate());
  CHECK_THROWS_AS(rating("a", 0, 6, 5).validate(), ValidationError);
  CHECK_THROWS_AS(rating("a", 0, 4, 0).validate(), ValidationError);
  CHECK_THROWS_AS(rating("", 0, 4, 4).validate(), ValidationError);
  CHECK_NOTHROW(exclusion("a", 0).validate());
  auto back = ReviewRating::from_json(rating("a", 3, 4, 5).to_json());
  CHECK(back.representativeness == 4);
  CHECK(back.clarity == 5);
}

TEST_CASE("summary: [4,4,5] and the normal-approximation interval") {
  auto s = summarize({rating("r", 0, 4, 3), rating("r", 1, 4, 3), rating("r", 2, 5, 3)});
  REQUIRE(s.rows.size() == 2u);
  const auto& rep = *std::find_if(s.rows.begin(), s.rows.end(), [](auto& r) { return r.criterion == "representativeness"; });
  CHECK(rep.mean == doctest::Approx(4.3333).epsilon(1e-4));
  const double half = 1.96 * std::sqrt(1.0 / 3.0) / std::sqrt(3.0);
  CHECK(rep.lo == doctest::Approx(13.0 / 3 - half));
  CHECK(rep.hi == doctest::Approx(13.0 / 3 + half));
  CHECK(rep.formatted() == "4.33 [3.68, 4.99]");
  const auto& clar = *std::find_if(s.rows.begin(), s.rows.end(), [](auto& r) { return r.criterion == "clarity"; });
  CHECK(clar.lo == clar.mean);
  CHECK(clar.hi == clar.mean);
}

TEST_CASE("summary: latest wins, exclusions leave every denominator") {
  auto s = summarize({rating("a", 0, 1, 1), rating("a", 0, 5, 5), rating("a", 1, 3, 3), rating("b", 1, 2, 2),
                      exclusion("b", 1)});
  CHECK(s.excluded == std::vector<int>{1});
  for (const auto& r : s.rows) {
    if (r.reviewer == "a") {
      CHECK(r.n == 1);
      CHECK(r.mean == 5.0);
    }
  }
}

TEST_CASE("property: summary equals brute-force recomputation from the log") {
  testsupport::Gen g(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ReviewRating> log;
    const int m = g.integer(1, 60);
    for (int i = 0; i < m; ++i) {
      const std::string who = g.coin() ? "r1" : "r2";
      const int proto = g.integer(0, 9);
      log.push_back(g.coin(0.1) ? exclusion(who, proto) : rating(who, proto, g.integer(1, 5), g.integer(1, 5)));
    }
    auto s = summarize(log);
    auto brute = brute_summary(log);
    CHECK(s.rows.size() == brute.size());
    for (const auto& r : s.rows) {
      auto it = brute.find({r.reviewer, r.criterion});
      REQUIRE(it != brute.end());
      CHECK(r.mean == doctest::Approx(it->second[0]).epsilon(1e-12));
      CHECK(r.lo == doctest::Approx(it->second[1]).epsilon(1e-12));
      CHECK(r.hi == doctest::Approx(it->second[2]).epsilon(1e-12));
      CHECK(r.n == static_cast<int>(it->second[3]));
    }
  }
}

TEST_CASE("store appends and replays") {
  auto path = fresh_log("replay");
  {
    ReviewStore store(path, 5);
    CHECK(store.submit(rating("a", 0, 4, 5)) == 1u);
    CHECK(store.submit(rating("a", 1, 2, 2)) == 2u);
    CHECK_THROWS_AS(store.submit(rating("a", 9, 2, 2)), NotFoundError);
    CHECK_THROWS_AS(store.submit(rating("a", 1, 7, 2)), ValidationError);
    CHECK(store.size() == 2u);
  }
  ReviewStore again(path, 5);
  REQUIRE(again.size() == 2u);
  auto snap = again.snapshot();
  CHECK(snap[0].representativeness == 4);
  CHECK(snap[0].clarity == 5);
  CHECK_FALSE(snap[0].timestamp.empty());
}

TEST_CASE("catalog requires projected banks in kind order") {
  auto banks = projected_banks({{PrototypeKind::Global1D, {"AFIB", "SR"}}, {PrototypeKind::Global2D, {"NORM"}}}, 2);
  auto cat = ReviewCatalog::from_banks(banks);
  CHECK(cat.entries.size() == 6u);
  CHECK(cat.entries[4].class_code == "NORM");
  std::swap(banks[0], banks[1]);
  CHECK_THROWS_AS(ReviewCatalog::from_banks(banks), ConfigurationError);
  auto raw = PrototypeBank::create(PrototypeKind::Global1D, {"SR"}, 1, 3);
  CHECK_THROWS_AS(ReviewCatalog::from_banks({raw}), ProjectionError);
}

TEST_CASE("paper-sized bank lists 1037 prototypes") {
  auto banks = projected_banks({{PrototypeKind::Global1D, codes_of(Branch::Rhythm)}}, 5);
  auto morph = projected_banks({{PrototypeKind::Partial2D, codes_of(Branch::Morphology)}}, 18);
  auto glob = projected_banks({{PrototypeKind::Global2D, codes_of(Branch::Global)}}, 7);
  banks.push_back(std::move(morph[0]));
  banks.push_back(std::move(glob[0]));
  auto cat = ReviewCatalog::from_banks(banks);
  CHECK(cat.entries.size() == 1037u);

  auto path = fresh_log("big");
  ReviewStore store(path, 1037);
  ReviewServer server(std::move(cat), store, 100);
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  httplib::Client cli("127.0.0.1", port);
  int seen = 0;
  for (int page = 1;; ++page) {
    auto res = cli.Get("/prototypes?page=" + std::to_string(page));
    REQUIRE(res);
    if (res->status == 404) break;
    auto j = nlohmann::json::parse(res->body);
    CHECK(j["total"] == 1037);
    seen += static_cast<int>(j["prototypes"].size());
    for (const auto& e : j["prototypes"]) {
      // blinding: class label and description only
      CHECK_FALSE(e.contains("weight"));
      CHECK_FALSE(e.contains("similarity"));
    }
  }
  CHECK(seen == 1037);
  server.stop();
}

TEST_CASE("HTTP round trip") {
  auto banks = projected_banks({{PrototypeKind::Global1D, {"AFIB", "SR"}}, {PrototypeKind::Partial2D, {"ASMI"}}}, 2);
  auto cat = ReviewCatalog::from_banks(banks);
  testsupport::Gen g(3);
  const SignalMatrix sig = testsupport::random_record(g, "x", 1, {}).signal;
  cat.signal_lookup = [&](const std::string& id) -> std::optional<SignalMatrix> {
    if (id.rfind("src", 0) == 0) return sig;
    return std::nullopt;
  };
  auto path = fresh_log("http");
  ReviewStore store(path, 6);
  ReviewServer server(std::move(cat), store, 4);
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  httplib::Client cli("127.0.0.1", port);

  auto page = cli.Get("/prototypes?page=2");
  REQUIRE(page);
  CHECK(page->status == 200);
  auto pj = nlohmann::json::parse(page->body);
  CHECK(pj["schema"] == "protoecg.prototype_page");
  CHECK(pj["pages"] == 2);
  CHECK(pj["prototypes"].size() == 2u);
  CHECK(pj["prototypes"][0]["class"] == "ASMI");

  auto img = cli.Get("/prototypes/4/render");
  REQUIRE(img);
  CHECK(img->status == 200);
  CHECK(img->get_header_value("Content-Type") == "image/svg+xml");
  CHECK(img->body.find("<svg") != std::string::npos);
  CHECK(img->body.find("highlight") != std::string::npos);
  CHECK(cli.Get("/prototypes/99/render")->status == 404);

  httplib::Headers auth{{"Authorization", "Bearer alice"}};
  for (int p = 0; p < 3; ++p) {
    const int rep = p == 2 ? 5 : 4;
    auto res = cli.Post("/ratings", auth, nlohmann::json{{"prototype", p}, {"representativeness", rep}, {"clarity", 5}}.dump(),
                        "application/json");
    REQUIRE(res);
    CHECK(res->status == 201);
  }
  auto bad = cli.Post("/ratings", auth, R"({"prototype":0,"representativeness":6,"clarity":5})", "application/json");
  CHECK(bad->status == 400);
  CHECK(cli.Post("/ratings", auth, "{not json", "application/json")->status == 400);
  CHECK(cli.Post("/ratings", auth, R"({"prototype":42,"representativeness":3,"clarity":3})", "application/json")->status == 404);

  auto sum = nlohmann::json::parse(cli.Get("/summary")->body);
  bool found = false;
  for (const auto& r : sum["rows"]) {
    if (r["reviewer"] == "alice" && r["criterion"] == "representativeness") {
      found = true;
      CHECK(r["mean"].get<double>() == doctest::Approx(4.3333).epsilon(1e-4));
      CHECK(r["n"] == 3);
    }
  }
  CHECK(found);

  CHECK(cli.Post("/prototypes/2/exclude", auth, "", "application/json")->status == 201);
  sum = nlohmann::json::parse(cli.Get("/summary")->body);
  CHECK(sum["excluded"] == nlohmann::json::array({2}));
  for (const auto& r : sum["rows"]) {
    if (r["reviewer"] == "alice") CHECK(r["n"] == 2);
  }
  server.stop();
}

TEST_CASE("concurrent reviewers lose no writes") {
  auto banks = projected_banks({{PrototypeKind::Global1D, {"AFIB", "SR", "STACH", "SBRAD", "SARRH"}}}, 20);
  auto path = fresh_log("concurrent");
  ReviewStore store(path, 100);
  ReviewServer server(ReviewCatalog::from_banks(banks), store, 50);
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  std::atomic<int> accepted{0};
  auto worker = [&](std::string who) {
    httplib::Client cli("127.0.0.1", port);
    for (int p = 0; p < 100; ++p) {
      auto res = cli.Post("/ratings", nlohmann::json{{"reviewer", who}, {"prototype", p}, {"representativeness", 1 + p % 5},
                                                     {"clarity", 5 - p % 5}}
                                          .dump(),
                          "application/json");
      if (res && res->status == 201) ++accepted;
    }
  };
  std::thread a(worker, "r1"), b(worker, "r2");
  a.join();
  b.join();
  server.stop();
  CHECK(accepted == 200);
  CHECK(store.size() == 200u);
  ReviewStore replay(path, 100);
  CHECK(replay.size() == 200u);
}
