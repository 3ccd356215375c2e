#include "protoecg/review.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include <httplib.h>

#include "protoecg/errors.hpp"
#include "protoecg/explainer.hpp"

namespace protoecg {

namespace fs = std::filesystem;

void ReviewRating::validate() const {
  if (reviewer.empty()) throw ValidationError("rating needs a reviewer");
  if (excluded) return;
  for (int v : {representativeness, clarity}) {
    if (v < 1 || v > 5) throw ValidationError("scores must be integers in 1..5");
  }
}

nlohmann::json ReviewRating::to_json() const {
  nlohmann::json j = {{"version", kReviewSchemaVersion},
                      {"reviewer", reviewer},
                      {"prototype", prototype},
                      {"excluded", excluded},
                      {"timestamp", timestamp}};
  if (!excluded) {
    j["representativeness"] = representativeness;
    j["clarity"] = clarity;
  }
  return j;
}

ReviewRating ReviewRating::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("rating must be a JSON object");
  if (j.value("version", kReviewSchemaVersion) != kReviewSchemaVersion) throw ValidationError("unsupported rating version");
  ReviewRating r;
  try {
    r.reviewer = j.value("reviewer", std::string());
    r.prototype = j.at("prototype").get<int>();
    r.excluded = j.value("excluded", false);
    if (!r.excluded) {
      r.representativeness = j.at("representativeness").get<int>();
      r.clarity = j.at("clarity").get<int>();
    }
    r.timestamp = j.value("timestamp", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed rating: ") + e.what());
  }
  return r;
}

std::string SummaryRow::formatted() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f [%.2f, %.2f]", mean, lo, hi);
  return buf;
}

nlohmann::json ReviewSummary::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows) {
    rs.push_back({{"reviewer", r.reviewer},
                  {"criterion", r.criterion},
                  {"mean", r.mean},
                  {"ci", {r.lo, r.hi}},
                  {"n", r.n},
                  {"formatted", r.formatted()}});
  }
  return {{"schema", "protoecg.review_summary"}, {"version", kReviewSchemaVersion}, {"rows", rs}, {"excluded", excluded}};
}

ReviewSummary summarize(const std::vector<ReviewRating>& log) {
  std::map<std::pair<std::string, int>, const ReviewRating*> latest;
  for (const auto& r : log) latest[{r.reviewer, r.prototype}] = &r;
  std::set<int> excluded;
  for (const auto& [key, r] : latest) {
    if (r->excluded) excluded.insert(key.second);
  }
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_reviewer;
  for (const auto& [key, r] : latest) {
    if (r->excluded || excluded.count(key.second)) continue;
    auto& v = by_reviewer[key.first];
    v.first.push_back(r->representativeness);
    v.second.push_back(r->clarity);
  }
  auto row = [](const std::string& who, const char* crit, const std::vector<double>& xs) {
    SummaryRow s;
    s.reviewer = who;
    s.criterion = crit;
    s.n = static_cast<int>(xs.size());
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / s.n;
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    const double sd = s.n > 1 ? std::sqrt(ss / (s.n - 1)) : 0.0;
    const double half = 1.96 * sd / std::sqrt(static_cast<double>(s.n));
    s.lo = s.mean - half;
    s.hi = s.mean + half;
    return s;
  };
  ReviewSummary out;
  for (const auto& [who, v] : by_reviewer) {
    if (v.first.empty()) continue;
    out.rows.push_back(row(who, "representativeness", v.first));
    out.rows.push_back(row(who, "clarity", v.second));
  }
  out.excluded.assign(excluded.begin(), excluded.end());
  return out;
}

namespace {

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

ReviewStore::ReviewStore(fs::path log_path, int num_prototypes) : path_(std::move(log_path)), num_prototypes_(num_prototypes) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ifstream in(path_);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      log_.push_back(ReviewRating::from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw IngestionError(path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::size_t ReviewStore::submit(ReviewRating rating) {
  rating.validate();
  if (rating.prototype < 0 || rating.prototype >= num_prototypes_) {
    throw NotFoundError("unknown prototype " + std::to_string(rating.prototype));
  }
  if (rating.timestamp.empty()) rating.timestamp = now_utc();
  const std::string line = rating.to_json().dump();
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to " + path_.string());
  out << line << '\n';
  out.flush();
  if (!out) throw IoError("append failed for " + path_.string());
  log_.push_back(std::move(rating));
  return log_.size();
}

std::vector<ReviewRating> ReviewStore::snapshot() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::size_t ReviewStore::size() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

// ---- catalog --------------------------------------------------------------

ReviewCatalog ReviewCatalog::from_banks(const std::vector<PrototypeBank>& banks) {
  const auto& tax = LabelTaxonomy::standard();
  ReviewCatalog cat;
  int last = -1;
  for (const auto& bank : banks) {
    if (static_cast<int>(bank.kind) <= last) throw ConfigurationError("banks must be given in kind order, one per kind");
    last = static_cast<int>(bank.kind);
    if (!bank.projected()) throw ProjectionError(std::string(kind_name(bank.kind)) + " bank is not projected");
    const std::string branch = bank.kind == PrototypeKind::Global1D ? "rhythm"
                               : bank.kind == PrototypeKind::Partial2D ? "morph"
                                                                       : "global";
    for (int j = 0; j < bank.size(); ++j) {
      CatalogEntry e;
      e.id = static_cast<int>(cat.entries.size());
      e.branch = branch;
      e.kind = bank.kind;
      e.class_code = bank.class_codes[bank.class_of[j]];
      e.description = tax.description(tax.index_of(e.class_code));
      e.source = *bank.provenance[j];
      e.latent_length = bank.latent_length;
      cat.entries.push_back(std::move(e));
    }
  }
  return cat;
}

std::string ReviewCatalog::render(int id) const {
  if (id < 0 || id >= static_cast<int>(entries.size())) throw NotFoundError("unknown prototype " + std::to_string(id));
  const auto& e = entries[id];
  std::optional<SignalMatrix> sig = signal_lookup ? signal_lookup(e.source.record_id) : std::nullopt;
  if (!sig) throw NotFoundError("source signal for prototype " + std::to_string(id) + " is not available");
  const auto window = latent_window_to_seconds(e.source.window_start, e.source.window_width, e.latent_length);
  std::string code = e.class_code;
  if (code.size() > 1 && code.back() == '_') code.pop_back();
  return render_svg(*sig, render_spec_for(e.kind, window, code + " - " + e.description));
}

// ---- HTTP -----------------------------------------------------------------

struct ReviewServer::Impl {
  ReviewCatalog catalog;
  ReviewStore& store;
  int page_size;
  httplib::Server server;
  std::thread thread;

  Impl(ReviewCatalog c, ReviewStore& s, int p) : catalog(std::move(c)), store(s), page_size(p) {}
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"version", kReviewSchemaVersion}, {"error", message}});
}

std::string bearer(const httplib::Request& req) {
  const auto auth = req.get_header_value("Authorization");
  const std::string prefix = "Bearer ";
  return auth.rfind(prefix, 0) == 0 ? auth.substr(prefix.size()) : std::string();
}

// Runs a handler body and maps library errors onto HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const NotFoundError& e) {
    send_error(res, 404, e.what());
  } catch (const ValidationError& e) {
    send_error(res, 400, e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, std::string("malformed JSON: ") + e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

int parse_id(const std::string& s) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw ValidationError("bad prototype id");
    return v;
  } catch (const std::logic_error&) {
    throw ValidationError("bad prototype id '" + s + "'");
  }
}

}  // namespace

ReviewServer::ReviewServer(ReviewCatalog catalog, ReviewStore& store, int page_size)
    : impl_(std::make_unique<Impl>(std::move(catalog), store, page_size)) {
  if (page_size < 1) throw ConfigurationError("page size must be >= 1");
  if (store.num_prototypes() != static_cast<int>(impl_->catalog.entries.size())) {
    throw ConfigurationError("review store and catalog disagree on the prototype count");
  }
  Impl& im = *impl_;

  im.server.Get("/prototypes", [&im](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const int total = static_cast<int>(im.catalog.entries.size());
      const int pages = std::max(1, (total + im.page_size - 1) / im.page_size);
      const int page = req.has_param("page") ? parse_id(req.get_param_value("page")) : 1;
      if (page < 1 || page > pages) throw NotFoundError("page out of range");
      nlohmann::json list = nlohmann::json::array();
      for (int i = (page - 1) * im.page_size; i < std::min(total, page * im.page_size); ++i) {
        const auto& e = im.catalog.entries[i];
        list.push_back({{"id", e.id},
                        {"class", e.class_code},
                        {"description", e.description},
                        {"kind", std::string(kind_name(e.kind))},
                        {"render", "/prototypes/" + std::to_string(e.id) + "/render"}});
      }
      send_json(res, 200,
                {{"schema", "protoecg.prototype_page"},
                 {"version", kReviewSchemaVersion},
                 {"page", page},
                 {"pages", pages},
                 {"page_size", im.page_size},
                 {"total", total},
                 {"prototypes", list}});
    });
  });

  im.server.Get(R"(/prototypes/(\d+)/render)", [&im](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string svg = im.catalog.render(parse_id(req.matches[1]));
      res.status = 200;
      res.set_content(svg, "image/svg+xml");
    });
  });

  im.server.Post("/ratings", [&im](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      ReviewRating r = ReviewRating::from_json(nlohmann::json::parse(req.body));
      if (r.reviewer.empty()) r.reviewer = bearer(req);
      const auto seq = im.store.submit(r);
      send_json(res, 201, {{"version", kReviewSchemaVersion}, {"accepted", true}, {"sequence", seq}});
    });
  });

  im.server.Post(R"(/prototypes/(\d+)/exclude)", [&im](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      ReviewRating r;
      r.prototype = parse_id(req.matches[1]);
      r.excluded = true;
      if (!req.body.empty()) {
        const auto j = nlohmann::json::parse(req.body);
        r.reviewer = j.value("reviewer", std::string());
        r.timestamp = j.value("timestamp", std::string());
      }
      if (r.reviewer.empty()) r.reviewer = bearer(req);
      const auto seq = im.store.submit(r);
      send_json(res, 201, {{"version", kReviewSchemaVersion}, {"accepted", true}, {"sequence", seq}});
    });
  });

  im.server.Get("/summary", [&im](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, im.store.summary().to_json()); });
  });
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void ReviewServer::run() { impl_->server.listen_after_bind(); }

void ReviewServer::start() {
  impl_->thread = std::thread([this] { run(); });
  impl_->server.wait_until_ready();
}

void ReviewServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace protoecg
