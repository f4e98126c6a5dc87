#include "spcagan/loggen.hpp"

#include "spcagan/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace spcagan::loggen {

void CorpusSpec::validate() const {
  if (n_users == 0) throw Error(ErrorKind::Spec, "n_users must be positive");
  if (n_days == 0) throw Error(ErrorKind::Spec, "n_days must be positive");
  if (n_insiders > n_users) throw Error(ErrorKind::Spec, "n_insiders exceeds n_users");
  if (scenarios.empty()) throw Error(ErrorKind::Spec, "scenario set is empty");
  for (int s : scenarios) {
    if (s < 1 || s > 4) throw Error(ErrorKind::Spec, "scenario id " + std::to_string(s) + " not in {1,2,3,4}");
  }
  if (burst_min_days == 0 || burst_min_days > burst_max_days) {
    throw Error(ErrorKind::Spec, "burst day range must satisfy 1 <= min <= max");
  }
  if (n_insiders > 0 && burst_min_days > n_days) {
    throw Error(ErrorKind::Spec, "burst_min_days exceeds n_days");
  }
}

bool ActivityLog::empty_events() const {
  return logon.empty() && email.empty() && http.empty() && device.empty() && file.empty();
}

void ActivityLog::sort() {
  std::sort(logon.begin(), logon.end());
  std::sort(email.begin(), email.end());
  std::sort(http.begin(), http.end());
  std::sort(device.begin(), device.end());
  std::sort(file.begin(), file.end());
  std::sort(psychometric.begin(), psychometric.end());
  std::sort(answers.begin(), answers.end());
}

std::set<std::string> ActivityLog::users() const {
  std::set<std::string> u;
  for (const auto& r : logon) u.insert(r.user);
  for (const auto& r : email) u.insert(r.user);
  for (const auto& r : http) u.insert(r.user);
  for (const auto& r : device) u.insert(r.user);
  for (const auto& r : file) u.insert(r.user);
  return u;
}

std::size_t ParseResult::total_skipped() const {
  std::size_t n = 0;
  for (const auto& [_, k] : skipped) n += k;
  return n;
}

// ---------------------------------------------------------------------------
// Generator

namespace {

const std::vector<std::string> kNeutralWords{
    "meeting", "report", "project", "schedule", "update", "review", "budget", "client", "team",
    "deadline", "document", "server", "account", "office", "plan", "quarter", "notes", "agenda",
    "request", "invoice", "contract", "design", "release", "status", "call", "lunch", "draft",
    "summary", "analysis", "training", "policy", "system", "network", "data", "customer", "order",
    "product", "sales", "travel", "week"};
const std::vector<std::string> kPositiveWords{"great", "thanks", "excellent", "happy", "good",
                                              "appreciate", "congratulations", "success", "glad",
                                              "wonderful", "pleased", "helpful"};
const std::vector<std::string> kNegativeWords{"angry", "unfair", "terrible", "hate", "furious", "awful",
                                              "disappointed", "quit", "revenge", "useless", "stupid",
                                              "worst"};
const std::vector<std::string> kBusinessDomains{"lockheed.com", "boeing.com", "raytheon.com",
                                                "harris.com", "northrop.com", "exxon.com"};
const std::vector<std::string> kWebDomains{"google.com", "cnn.com", "espn.com", "weather.com",
                                           "amazon.com", "wikipedia.org", "nytimes.com", "ebay.com",
                                           "facebook.com", "msn.com", "bbc.co.uk", "reddit.com"};
const std::vector<std::string> kFileStems{"report", "budget", "design", "contract", "roadmap",
                                          "minutes", "specs", "proposal", "payroll", "inventory"};

struct Profile {
  std::string id;
  std::string name;
  std::string home_pc;
  double email_rate, http_rate, file_rate, device_rate;
  bool device_user;
  double late_prob, ext_ratio, job_prob, leak_prob, positivity, negativity;
  double o, c, e, a, n;
};

// Rows generated for one user-day before merging into the log.
struct DayRows {
  std::vector<LogonRow> logon;
  std::vector<EmailRow> email;
  std::vector<HttpRow> http;
  std::vector<DeviceRow> device;
  std::vector<FileRow> file;

  DayEvents view() const {
    DayEvents ev;
    for (const auto& r : logon) ev.logon.push_back(&r);
    for (const auto& r : email) ev.email.push_back(&r);
    for (const auto& r : http) ev.http.push_back(&r);
    for (const auto& r : device) ev.device.push_back(&r);
    for (const auto& r : file) ev.file.push_back(&r);
    return ev;
  }
};

struct Session {
  Timestamp begin, end;
};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
bool chance(Rng& rng, double p) { return std::bernoulli_distribution(std::clamp(p, 0.0, 1.0))(rng); }
int poisson(Rng& rng, double lambda) {
  return lambda <= 0.0 ? 0 : std::poisson_distribution<int>(lambda)(rng);
}
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Timestamp at_hour(std::int64_t day, double hour) {
  const auto secs = static_cast<std::int64_t>(std::clamp(hour, 0.0, 23.9997) * 3600.0);
  return day * 86400 + secs;
}

std::string words(Rng& rng, int n, double p_pos, double p_neg) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i) out.push_back(' ');
    const double u = uniform(rng, 0.0, 1.0);
    if (u < p_pos) out += pick(kPositiveWords, rng);
    else if (u < p_pos + p_neg) out += pick(kNegativeWords, rng);
    else out += pick(kNeutralWords, rng);
  }
  return out;
}

Timestamp time_in(const std::vector<Session>& sessions, Rng& rng) {
  double total = 0.0;
  for (const auto& s : sessions) total += static_cast<double>(s.end - s.begin);
  double u = uniform(rng, 0.0, total);
  for (const auto& s : sessions) {
    const double len = static_cast<double>(s.end - s.begin);
    if (u <= len) return s.begin + static_cast<Timestamp>(u);
    u -= len;
  }
  return sessions.back().end;
}

std::string user_address(const Profile& p) {
  std::string a = p.id;
  std::transform(a.begin(), a.end(), a.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return a + "@" + std::string(kCompanyDomain);
}

std::string random_token(Rng& rng, int len) {
  static constexpr char kAlpha[] = "abcdefghijklmnopqrstuvwxyz";
  std::string s;
  for (int i = 0; i < len; ++i) s.push_back(kAlpha[uniform_int(rng, 0, 25)]);
  return s;
}

EmailRow make_email(const Profile& p, const std::vector<Profile>& all, Timestamp t, Rng& rng,
                    bool personal_allowed) {
  EmailRow e;
  e.time = t;
  e.user = p.id;
  const int n_to = uniform_int(rng, 1, 3);
  for (int i = 0; i < n_to; ++i) {
    if (chance(rng, p.ext_ratio)) {
      if (personal_allowed && chance(rng, 0.1)) {
        e.to.push_back(random_token(rng, 6) + "@" + pick(personal_mail_domains(), rng));
      } else {
        e.to.push_back(random_token(rng, 5) + "@" + pick(kBusinessDomains, rng));
      }
    } else {
      e.to.push_back(user_address(pick(all, rng)));
    }
  }
  if (chance(rng, 0.25)) e.cc.push_back(user_address(pick(all, rng)));
  e.attachments = chance(rng, 0.25) ? uniform_int(rng, 1, 3) : 0;
  e.size = 2000 + static_cast<std::int64_t>(std::lognormal_distribution<double>(9.0, 0.6)(rng)) +
           e.attachments * static_cast<std::int64_t>(uniform(rng, 5e4, 4e5));
  e.content = words(rng, uniform_int(rng, 10, 25), p.positivity, p.negativity);
  return e;
}

HttpRow make_http(const Profile& p, const std::string& domain, Timestamp t, Rng& rng) {
  HttpRow h;
  h.time = t;
  h.user = p.id;
  h.url = "http://www." + domain + "/" + random_token(rng, 4) + "/" + random_token(rng, 6) + ".html";
  h.content = words(rng, uniform_int(rng, 5, 15), p.positivity, p.negativity);
  return h;
}

FileRow make_file(const Profile& p, std::string filename, Timestamp t, Rng& rng) {
  FileRow f;
  f.time = t;
  f.user = p.id;
  f.filename = std::move(filename);
  f.content = words(rng, uniform_int(rng, 5, 12), 0.02, 0.02);
  return f;
}

std::string document_name(Rng& rng) {
  static const std::vector<std::string> ext{".doc", ".pdf", ".txt", ".xls"};
  return pick(kFileStems, rng) + "_" + std::to_string(uniform_int(rng, 1, 999)) + pick(ext, rng);
}

std::string baseline_file_name(Rng& rng) {
  const double u = uniform(rng, 0.0, 1.0);
  if (u < 0.9) return document_name(rng);
  if (u < 0.95) return pick(kFileStems, rng) + "_" + std::to_string(uniform_int(rng, 1, 999)) + ".zip";
  static const std::vector<std::string> installers{"setup.exe", "update.exe", "installer.exe", "viewer.exe"};
  return pick(installers, rng);
}

void baseline_day(const Profile& p, const std::vector<Profile>& all, const std::vector<std::string>& shared_pcs,
                  std::int64_t day, Rng& rng, DayRows& out) {
  const bool weekend = is_weekend(day);
  const double scale = weekend ? 0.25 : 1.0;

  double start = weekend ? uniform(rng, 9.0, 12.0) : uniform(rng, 7.6, 9.4);
  double end = start + (weekend ? uniform(rng, 1.0, 3.5) : uniform(rng, 7.5, 9.0));
  if (chance(rng, p.late_prob)) end = uniform(rng, 19.0, 22.5);
  end = std::min(end, 23.5);

  const int n_sessions = 1 + std::min(2, poisson(rng, 0.4));
  std::vector<double> cuts{start, end};
  for (int i = 1; i < n_sessions; ++i) cuts.push_back(uniform(rng, start + 0.5, end - 0.5));
  std::sort(cuts.begin(), cuts.end());

  std::vector<Session> sessions;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double b = i == 0 ? cuts[i] : cuts[i] + uniform(rng, 0.15, 0.6);
    const double e = cuts[i + 1];
    if (e - b < 0.1) continue;
    const Timestamp tb = at_hour(day, b), te = at_hour(day, e);
    sessions.push_back({tb, te});
    const std::string pc = chance(rng, 0.05) ? pick(shared_pcs, rng) : p.home_pc;
    out.logon.push_back({tb, p.id, "", pc, LogonActivity::Logon});
    out.logon.push_back({te, p.id, "", pc, LogonActivity::Logoff});
  }
  if (sessions.empty()) {
    const Timestamp tb = at_hour(day, start), te = at_hour(day, start + 1.0);
    sessions.push_back({tb, te});
    out.logon.push_back({tb, p.id, "", p.home_pc, LogonActivity::Logon});
    out.logon.push_back({te, p.id, "", p.home_pc, LogonActivity::Logoff});
  }

  const int n_email = poisson(rng, p.email_rate * scale);
  for (int i = 0; i < n_email; ++i) out.email.push_back(make_email(p, all, time_in(sessions, rng), rng, true));

  const int n_http = poisson(rng, p.http_rate * scale);
  int jobs = 0;
  for (int i = 0; i < n_http; ++i) {
    std::string domain = pick(kWebDomains, rng);
    if (jobs < 2 && chance(rng, p.job_prob)) {
      domain = pick(job_domains(), rng);
      ++jobs;
    }
    out.http.push_back(make_http(p, domain, time_in(sessions, rng), rng));
  }
  if (chance(rng, p.leak_prob)) {
    out.http.push_back(make_http(p, pick(leak_domains(), rng), time_in(sessions, rng), rng));
  }

  const int n_file = poisson(rng, p.file_rate * scale);
  for (int i = 0; i < n_file; ++i) out.file.push_back(make_file(p, baseline_file_name(rng), time_in(sessions, rng), rng));

  if (p.device_user) {
    const int n_dev = poisson(rng, p.device_rate * scale);
    for (int i = 0; i < n_dev; ++i) {
      const Timestamp t = time_in(sessions, rng);
      const Timestamp t2 = std::min<Timestamp>(t + static_cast<Timestamp>(uniform(rng, 300, 3600)), day * 86400 + 86399);
      out.device.push_back({t, p.id, "", p.home_pc, DeviceActivity::Connect});
      out.device.push_back({t2, p.id, "", p.home_pc, DeviceActivity::Disconnect});
    }
  }
}

// Removes every scenario marker so that no rule template can fire.
void strip_markers(DayRows& d) {
  auto is_marker_http = [](const HttpRow& h) {
    const auto dom = url_domain(h.url);
    return std::find(leak_domains().begin(), leak_domains().end(), dom) != leak_domains().end() ||
           std::find(job_domains().begin(), job_domains().end(), dom) != job_domains().end();
  };
  std::erase_if(d.http, is_marker_http);
  std::erase_if(d.file, [](const FileRow& f) {
    return std::find(sabotage_tools().begin(), sabotage_tools().end(), f.filename) != sabotage_tools().end();
  });
  std::erase_if(d.email, [](const EmailRow& e) {
    return std::any_of(e.to.begin(), e.to.end(), [](const std::string& a) {
      const auto dom = mail_domain(a);
      return std::find(personal_mail_domains().begin(), personal_mail_domains().end(), dom) !=
             personal_mail_domains().end();
    });
  });
}

void inject_signature(int scenario, const Profile& p, const std::vector<std::string>& shared_pcs, std::int64_t day,
                      Rng& rng, DayRows& out) {
  switch (scenario) {
    case 1: {
      const double h0 = uniform(rng, 20.0, 22.0);
      const double h1 = h0 + uniform(rng, 1.0, 1.9);
      const Timestamp tb = at_hour(day, h0), te = at_hour(day, h1);
      out.logon.push_back({tb, p.id, "", p.home_pc, LogonActivity::Logon});
      out.logon.push_back({te, p.id, "", p.home_pc, LogonActivity::Logoff});
      const std::vector<Session> s{{tb + 600, te - 300}};
      out.device.push_back({tb + 300, p.id, "", p.home_pc, DeviceActivity::Connect});
      const int n_files = uniform_int(rng, 3, 8);
      for (int i = 0; i < n_files; ++i) out.file.push_back(make_file(p, document_name(rng), time_in(s, rng), rng));
      const int n_leak = uniform_int(rng, 1, 2);
      for (int i = 0; i < n_leak; ++i) out.http.push_back(make_http(p, pick(leak_domains(), rng), time_in(s, rng), rng));
      out.device.push_back({te - 120, p.id, "", p.home_pc, DeviceActivity::Disconnect});
      break;
    }
    case 2: {
      const std::vector<Session> s{{at_hour(day, 9.0), at_hour(day, 17.0)}};
      const int n_jobs = uniform_int(rng, 3, 6);
      for (int i = 0; i < n_jobs; ++i) out.http.push_back(make_http(p, pick(job_domains(), rng), time_in(s, rng), rng));
      const Timestamp tc = time_in(s, rng);
      out.device.push_back({tc, p.id, "", p.home_pc, DeviceActivity::Connect});
      const std::vector<Session> window{{tc + 60, tc + 1800}};
      const int n_docs = uniform_int(rng, 5, 12);
      for (int i = 0; i < n_docs; ++i) out.file.push_back(make_file(p, document_name(rng), time_in(window, rng), rng));
      out.device.push_back({tc + 1900, p.id, "", p.home_pc, DeviceActivity::Disconnect});
      break;
    }
    case 3: {
      std::string pc = pick(shared_pcs, rng);
      const double h0 = uniform(rng, 19.0, 22.0);
      const Timestamp tb = at_hour(day, h0), te = at_hour(day, h0 + uniform(rng, 0.5, 1.5));
      out.logon.push_back({tb, p.id, "", pc, LogonActivity::Logon});
      out.logon.push_back({te, p.id, "", pc, LogonActivity::Logoff});
      const std::vector<Session> s{{tb + 60, te - 60}};
      const int n_tools = uniform_int(rng, 1, 2);
      for (int i = 0; i < n_tools; ++i) out.file.push_back(make_file(p, pick(sabotage_tools(), rng), time_in(s, rng), rng));
      const std::vector<Session> office{{at_hour(day, 9.0), at_hour(day, 17.0)}};
      const int n_mail = uniform_int(rng, 1, 3);
      for (int i = 0; i < n_mail; ++i) {
        EmailRow e;
        e.time = time_in(office, rng);
        e.user = p.id;
        e.to.push_back(random_token(rng, 5) + "@" + std::string(kCompanyDomain));
        e.size = 2000 + static_cast<std::int64_t>(uniform(rng, 1000, 9000));
        e.content = words(rng, uniform_int(rng, 10, 20), 0.0, 0.6);
        out.email.push_back(std::move(e));
      }
      break;
    }
    case 4: {
      const std::vector<Session> s{{at_hour(day, 9.0), at_hour(day, 17.5)}};
      const int n_mail = uniform_int(rng, 3, 6);
      for (int i = 0; i < n_mail; ++i) {
        EmailRow e;
        e.time = time_in(s, rng);
        e.user = p.id;
        e.to.push_back(random_token(rng, 6) + "@" + pick(personal_mail_domains(), rng));
        e.attachments = uniform_int(rng, 1, 4);
        e.size = 2000 + e.attachments * static_cast<std::int64_t>(uniform(rng, 5e5, 2e6));
        e.content = words(rng, uniform_int(rng, 5, 12), 0.05, 0.05);
        out.email.push_back(std::move(e));
      }
      break;
    }
    default:
      throw Error(ErrorKind::Spec, "unknown scenario " + std::to_string(scenario));
  }
}

template <typename Row>
void assign_ids(std::vector<Row>& rows, char prefix) {
  std::sort(rows.begin(), rows.end());
  char buf[32];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::snprintf(buf, sizeof buf, "{%c%08zu}", prefix, i + 1);
    rows[i].id = buf;
  }
}

}  // namespace

ActivityLog generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  std::vector<Profile> users;
  std::set<std::string> taken;
  for (std::size_t i = 0; i < spec.n_users; ++i) {
    Profile p;
    do {
      p.id.clear();
      for (int k = 0; k < 3; ++k) p.id.push_back(static_cast<char>('A' + uniform_int(rng, 0, 25)));
      char digits[8];
      std::snprintf(digits, sizeof digits, "%04d", uniform_int(rng, 0, 9999));
      p.id += digits;
    } while (!taken.insert(p.id).second);
    p.name = "Employee " + p.id;
    char pc[16];
    std::snprintf(pc, sizeof pc, "PC-%04zu", 1000 + i);
    p.home_pc = pc;
    p.email_rate = uniform(rng, 2.0, 8.0);
    p.http_rate = uniform(rng, 5.0, 20.0);
    p.file_rate = uniform(rng, 0.5, 4.0);
    p.device_user = chance(rng, 0.35);
    p.device_rate = uniform(rng, 0.3, 1.5);
    p.late_prob = uniform(rng, 0.02, 0.12);
    p.ext_ratio = uniform(rng, 0.05, 0.3);
    p.job_prob = uniform(rng, 0.0, 0.04);
    p.leak_prob = uniform(rng, 0.0, 0.03);
    p.positivity = uniform(rng, 0.03, 0.12);
    p.negativity = uniform(rng, 0.01, 0.06);
    p.o = uniform_int(rng, 10, 50);
    p.c = uniform_int(rng, 10, 50);
    p.e = uniform_int(rng, 10, 50);
    p.a = uniform_int(rng, 10, 50);
    p.n = uniform_int(rng, 10, 50);
    users.push_back(std::move(p));
  }

  std::vector<std::string> shared_pcs;
  for (int i = 0; i < 12; ++i) {
    char pc[16];
    std::snprintf(pc, sizeof pc, "PC-%04d", 5000 + i);
    shared_pcs.push_back(pc);
  }

  // Insiders: a seeded subset of users, scenarios assigned round-robin.
  std::vector<std::size_t> order(spec.n_users);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::vector<int> scen(spec.scenarios.begin(), spec.scenarios.end());
  std::map<std::size_t, std::pair<int, std::pair<std::size_t, std::size_t>>> insider;  // user -> (scenario, [b, e))
  for (std::size_t i = 0; i < spec.n_insiders; ++i) {
    const std::size_t len = std::min<std::size_t>(
        spec.n_days, static_cast<std::size_t>(uniform_int(rng, static_cast<int>(spec.burst_min_days),
                                                          static_cast<int>(spec.burst_max_days))));
    const std::size_t begin = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(spec.n_days - len)));
    insider[order[i]] = {scen[i % scen.size()], {begin, begin + len}};
  }

  ActivityLog log;
  for (std::size_t u = 0; u < users.size(); ++u) {
    const Profile& p = users[u];
    Rng urng(derive_seed(spec.seed, 1000 + u));
    for (std::size_t d = 0; d < spec.n_days; ++d) {
      const std::int64_t day = spec.start_day + static_cast<std::int64_t>(d);
      DayRows rows;
      baseline_day(p, users, shared_pcs, day, urng, rows);
      if (match_scenarios(rows.view(), p.home_pc) != 0) strip_markers(rows);

      const auto it = insider.find(u);
      if (it != insider.end() && d >= it->second.second.first && d < it->second.second.second) {
        const int s = it->second.first;
        inject_signature(s, p, shared_pcs, day, urng, rows);
        log.answers.push_back({p.id, day, s});
      }
      std::move(rows.logon.begin(), rows.logon.end(), std::back_inserter(log.logon));
      std::move(rows.email.begin(), rows.email.end(), std::back_inserter(log.email));
      std::move(rows.http.begin(), rows.http.end(), std::back_inserter(log.http));
      std::move(rows.device.begin(), rows.device.end(), std::back_inserter(log.device));
      std::move(rows.file.begin(), rows.file.end(), std::back_inserter(log.file));
    }
    log.psychometric.push_back({p.id, p.name, p.o, p.c, p.e, p.a, p.n});
  }

  assign_ids(log.logon, 'L');
  assign_ids(log.email, 'E');
  assign_ids(log.http, 'H');
  assign_ids(log.device, 'D');
  assign_ids(log.file, 'F');
  log.sort();
  return log;
}

// ---------------------------------------------------------------------------
// CSV persistence

namespace {

std::string join_list(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s.push_back(';');
    s += v[i];
  }
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t b = 0;
  while (true) {
    const auto e = s.find(';', b);
    out.push_back(s.substr(b, e - b));
    if (e == std::string::npos) break;
    b = e + 1;
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

std::string line(const std::vector<std::string>& f) { return csv::join(f) + "\n"; }

struct Files {
  std::string logon, email, http, device, file, psychometric, answers;
};

Files render(const ActivityLog& log) {
  Files f;
  f.logon = "id,date,user,pc,activity\n";
  for (const auto& r : log.logon) {
    f.logon += line({r.id, format_timestamp(r.time), r.user, r.pc,
                     r.activity == LogonActivity::Logon ? "Logon" : "Logoff"});
  }
  f.email = "id,date,user,to,cc,size,attachments,content\n";
  for (const auto& r : log.email) {
    f.email += line({r.id, format_timestamp(r.time), r.user, join_list(r.to), join_list(r.cc),
                     std::to_string(r.size), std::to_string(r.attachments), r.content});
  }
  f.http = "id,date,user,url,content\n";
  for (const auto& r : log.http) f.http += line({r.id, format_timestamp(r.time), r.user, r.url, r.content});
  f.device = "id,date,user,pc,activity\n";
  for (const auto& r : log.device) {
    f.device += line({r.id, format_timestamp(r.time), r.user, r.pc,
                      r.activity == DeviceActivity::Connect ? "Connect" : "Disconnect"});
  }
  f.file = "id,date,user,filename,content\n";
  for (const auto& r : log.file) f.file += line({r.id, format_timestamp(r.time), r.user, r.filename, r.content});
  f.psychometric = "employee_name,user_id,O,C,E,A,N\n";
  for (const auto& r : log.psychometric) {
    f.psychometric += line({r.employee_name, r.user, fmt_double(r.openness), fmt_double(r.conscientiousness),
                            fmt_double(r.extraversion), fmt_double(r.agreeableness), fmt_double(r.neuroticism)});
  }
  f.answers = "user,date,scenario\n";
  for (const auto& r : log.answers) f.answers += line({r.user, format_date(r.day), std::to_string(r.scenario)});
  return f;
}

// Column lookup by header name; throws a format error when a required column is missing.
class Columns {
 public:
  Columns(const csv::Table& t, const std::string& file) : table_(t), file_(file) {}

  std::ptrdiff_t required(const std::string& name) const {
    const auto idx = optional(name);
    if (idx < 0) throw Error(ErrorKind::Format, file_ + ": header lacks column '" + name + "'");
    return idx;
  }
  std::ptrdiff_t optional(const std::string& name) const {
    const auto it = std::find(table_.header.begin(), table_.header.end(), name);
    return it == table_.header.end() ? -1 : it - table_.header.begin();
  }

 private:
  const csv::Table& table_;
  std::string file_;
};

std::string cell(const std::vector<std::string>& row, std::ptrdiff_t idx) {
  return idx < 0 ? std::string() : row[static_cast<std::size_t>(idx)];
}

}  // namespace

std::string serialize(const ActivityLog& log) {
  const Files f = render(log);
  return "#logon.csv\n" + f.logon + "#email.csv\n" + f.email + "#http.csv\n" + f.http + "#device.csv\n" +
         f.device + "#file.csv\n" + f.file + "#psychometric.csv\n" + f.psychometric + "#answers.csv\n" + f.answers;
}

void write_cert_csv(const ActivityLog& log, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  const Files f = render(log);
  csv::write_atomic(dir / "logon.csv", f.logon);
  csv::write_atomic(dir / "email.csv", f.email);
  csv::write_atomic(dir / "http.csv", f.http);
  csv::write_atomic(dir / "device.csv", f.device);
  csv::write_atomic(dir / "file.csv", f.file);
  csv::write_atomic(dir / "psychometric.csv", f.psychometric);
  if (!log.answers.empty()) csv::write_atomic(dir / "answers.csv", f.answers);
}

ParseResult parse_cert_csv(const std::filesystem::path& dir) {
  ParseResult res;
  auto present = [&](const char* name) { return std::filesystem::is_regular_file(dir / name); };
  auto load = [&](const char* name) {
    res.files_read.push_back(name);
    auto t = csv::read(dir / name);
    res.skipped[name] = t.malformed;
    return t;
  };

  if (present("logon.csv")) {
    const auto t = load("logon.csv");
    const Columns c(t, "logon.csv");
    const auto id = c.optional("id"), date = c.required("date"), user = c.required("user"),
               pc = c.required("pc"), act = c.required("activity");
    for (const auto& row : t.rows) {
      const auto ts = parse_timestamp(cell(row, date));
      const auto& a = row[static_cast<std::size_t>(act)];
      if (!ts || (a != "Logon" && a != "Logoff")) {
        ++res.skipped["logon.csv"];
        continue;
      }
      res.log.logon.push_back({*ts, cell(row, user), cell(row, id), cell(row, pc),
                               a == "Logon" ? LogonActivity::Logon : LogonActivity::Logoff});
    }
  }
  if (present("email.csv")) {
    const auto t = load("email.csv");
    const Columns c(t, "email.csv");
    const auto id = c.optional("id"), date = c.required("date"), user = c.required("user"), to = c.required("to"),
               cc = c.optional("cc"), size = c.required("size"), att = c.required("attachments"),
               content = c.optional("content");
    for (const auto& row : t.rows) {
      EmailRow e;
      const auto ts = parse_timestamp(cell(row, date));
      std::string att_text = cell(row, att);
      bool ok = ts && parse_number(cell(row, size), e.size);
      if (ok && !parse_number(att_text, e.attachments)) {
        // Some CERT releases list attachment file names instead of a count.
        e.attachments = att_text.empty() ? 0 : static_cast<int>(split_list(att_text).size());
      }
      if (!ok) {
        ++res.skipped["email.csv"];
        continue;
      }
      e.time = *ts;
      e.user = cell(row, user);
      e.id = cell(row, id);
      e.to = split_list(cell(row, to));
      e.cc = split_list(cell(row, cc));
      e.content = cell(row, content);
      res.log.email.push_back(std::move(e));
    }
  }
  if (present("http.csv")) {
    const auto t = load("http.csv");
    const Columns c(t, "http.csv");
    const auto id = c.optional("id"), date = c.required("date"), user = c.required("user"), url = c.required("url"),
               content = c.optional("content");
    for (const auto& row : t.rows) {
      const auto ts = parse_timestamp(cell(row, date));
      if (!ts) {
        ++res.skipped["http.csv"];
        continue;
      }
      res.log.http.push_back({*ts, cell(row, user), cell(row, id), cell(row, url), cell(row, content)});
    }
  }
  if (present("device.csv")) {
    const auto t = load("device.csv");
    const Columns c(t, "device.csv");
    const auto id = c.optional("id"), date = c.required("date"), user = c.required("user"), pc = c.required("pc"),
               act = c.required("activity");
    for (const auto& row : t.rows) {
      const auto ts = parse_timestamp(cell(row, date));
      const auto& a = row[static_cast<std::size_t>(act)];
      if (!ts || (a != "Connect" && a != "Disconnect")) {
        ++res.skipped["device.csv"];
        continue;
      }
      res.log.device.push_back({*ts, cell(row, user), cell(row, id), cell(row, pc),
                                a == "Connect" ? DeviceActivity::Connect : DeviceActivity::Disconnect});
    }
  }
  if (present("file.csv")) {
    const auto t = load("file.csv");
    const Columns c(t, "file.csv");
    const auto id = c.optional("id"), date = c.required("date"), user = c.required("user"),
               fname = c.required("filename"), content = c.optional("content");
    for (const auto& row : t.rows) {
      const auto ts = parse_timestamp(cell(row, date));
      if (!ts) {
        ++res.skipped["file.csv"];
        continue;
      }
      res.log.file.push_back({*ts, cell(row, user), cell(row, id), cell(row, fname), cell(row, content)});
    }
  }
  if (present("psychometric.csv")) {
    const auto t = load("psychometric.csv");
    const Columns c(t, "psychometric.csv");
    const auto name = c.optional("employee_name"), user = c.required("user_id");
    const std::ptrdiff_t ocean[5] = {c.required("O"), c.required("C"), c.required("E"), c.required("A"),
                                     c.required("N")};
    for (const auto& row : t.rows) {
      double v[5];
      bool ok = true;
      for (int k = 0; k < 5; ++k) ok = ok && parse_number(cell(row, ocean[k]), v[k]) && v[k] >= 0 && v[k] <= 100;
      if (!ok) {
        ++res.skipped["psychometric.csv"];
        continue;
      }
      res.log.psychometric.push_back({cell(row, user), cell(row, name), v[0], v[1], v[2], v[3], v[4]});
    }
  }
  if (present("answers.csv")) {
    const auto t = load("answers.csv");
    const Columns c(t, "answers.csv");
    const auto user = c.required("user"), date = c.required("date"), scen = c.required("scenario");
    for (const auto& row : t.rows) {
      const auto day = parse_date(cell(row, date));
      int s = 0;
      if (!day || !parse_number(cell(row, scen), s)) {
        ++res.skipped["answers.csv"];
        continue;
      }
      res.log.answers.push_back({cell(row, user), *day, s});
    }
  }

  if (res.files_read.empty()) {
    throw Error(ErrorKind::Input, "no recognizable CERT file (logon/email/http/device/file/psychometric.csv) in " +
                                      dir.string());
  }
  res.log.sort();
  return res;
}

}  // namespace spcagan::loggen
