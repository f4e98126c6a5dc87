#include "spcagan/csv.hpp"
#include "spcagan/loggen.hpp"
#include "support.hpp"

#include <doctest.h>

#include <map>

#include <set>

using namespace spcagan;
using namespace spcagan::loggen;

namespace {

CorpusSpec small_spec(std::uint64_t seed) {
  CorpusSpec s;
  s.n_users = 12;
  s.n_days = 21;
  s.n_insiders = 4;
  s.scenarios = {1, 2, 3, 4};
  s.seed = seed;
  s.burst_min_days = 2;
  s.burst_max_days = 4;
  return s;
}

Timestamp at(const char* text) { return *parse_timestamp(text); }

}  // namespace

TEST_SUITE("loggen") {
  TEST_CASE("the same spec yields the same corpus") {
    const auto a = generate_corpus(small_spec(3));
    const auto b = generate_corpus(small_spec(3));
    CHECK(a == b);
    CHECK(serialize(a) == serialize(b));
    CHECK(serialize(a) != serialize(generate_corpus(small_spec(4))));
  }

  TEST_CASE("generate, write and parse round-trip exactly") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      CAPTURE(seed);
      const auto log = generate_corpus(small_spec(seed));
      const auto dir = testing::scratch_dir("loggen_rt");
      write_cert_csv(log, dir);
      const auto parsed = parse_cert_csv(dir);
      CHECK(parsed.total_skipped() == 0);
      CHECK(parsed.log == log);
      CHECK(serialize(parsed.log) == serialize(log));
    }
  }

  TEST_CASE("the rule templates recover every injected day and nothing else") {
    for (std::uint64_t seed : {1u, 5u, 9u}) {
      CAPTURE(seed);
      const auto log = generate_corpus(small_spec(seed));
      REQUIRE_FALSE(log.answers.empty());
      const auto hits = detect_scenarios(log);
      const std::set<MaliciousDay> found(hits.begin(), hits.end());
      std::size_t recalled = 0;
      for (const auto& a : log.answers) recalled += found.count(a);
      CHECK(recalled == log.answers.size());
      CHECK(found.size() == log.answers.size());
    }
  }

  TEST_CASE("insiders and bursts respect the spec") {
    const auto spec = small_spec(11);
    const auto log = generate_corpus(spec);
    std::map<std::string, std::set<std::int64_t>> days;
    std::set<int> scenarios;
    for (const auto& a : log.answers) {
      days[a.user].insert(a.day);
      scenarios.insert(a.scenario);
      CHECK(a.day >= spec.start_day);
      CHECK(a.day < spec.start_day + static_cast<std::int64_t>(spec.n_days));
    }
    CHECK(days.size() == spec.n_insiders);
    CHECK(scenarios == spec.scenarios);
    for (const auto& [user, d] : days) {
      CHECK(d.size() >= spec.burst_min_days);
      CHECK(d.size() <= spec.burst_max_days);
    }
    CHECK(log.users().size() == spec.n_users);
    CHECK(log.psychometric.size() == spec.n_users);
  }

  TEST_CASE("invalid specs are rejected") {
    auto s = small_spec(1);
    s.n_insiders = 13;
    CHECK_THROWS_AS(generate_corpus(s), Error);
    s = small_spec(1);
    s.scenarios = {5};
    CHECK_THROWS_AS(s.validate(), Error);
    s = small_spec(1);
    s.burst_min_days = 5;
    s.burst_max_days = 4;
    CHECK_THROWS_AS(s.validate(), Error);
  }

  TEST_CASE("malformed rows are skipped and counted") {
    const auto dir = testing::scratch_dir("loggen_bad");
    csv::write_atomic(dir / "logon.csv",
                      "id,date,user,pc,activity\n"
                      "{A},01/04/2010 07:00:00,U1,PC-1,Logon\n"
                      "{B},not a date,U1,PC-1,Logon\n"
                      "{C},01/04/2010 09:00:00,U1,PC-1,Teleport\n");
    const auto r = parse_cert_csv(dir);
    CHECK(r.log.logon.size() == 1);
    CHECK(r.skipped.at("logon.csv") == 2);
  }

  TEST_CASE("helpers for domains and documents") {
    CHECK(url_domain("http://www.wikileaks.org/page/1") == "wikileaks.org");
    CHECK(url_domain("monster.com") == "monster.com");
    CHECK(mail_domain("a.b@gmail.com") == "gmail.com");
    CHECK(mail_domain("nobody") == "");
    CHECK(is_document_file("C:\\docs\\plan.docx"));
    CHECK_FALSE(is_document_file("setup.exe"));
  }

  TEST_CASE("scenario signatures match only complete patterns") {
    LogonRow logon{at("01/05/2010 22:00:00"), "U", "l", "PC-1", LogonActivity::Logon};
    DeviceRow dev{at("01/05/2010 22:10:00"), "U", "d", "PC-1", DeviceActivity::Connect};
    FileRow file{at("01/05/2010 22:20:00"), "U", "f", "R:\\x.txt", ""};
    HttpRow leak{at("01/05/2010 22:30:00"), "U", "h", "http://wikileaks.org/upload", ""};
    DayEvents day;
    day.logon = {&logon};
    day.device = {&dev};
    day.file = {&file};
    day.http = {&leak};
    CHECK(match_scenarios(day, "PC-1") == (1u << 1));
    day.http.clear();
    CHECK(match_scenarios(day, "PC-1") == 0u);

    // Sabotage needs the tool and an after-hours logon away from the home PC.
    FileRow tool{at("01/05/2010 22:20:00"), "U", "t", "C:\\tmp\\keylogger.exe", ""};
    DayEvents s3;
    s3.logon = {&logon};
    s3.file = {&tool};
    CHECK(match_scenarios(s3, "PC-1") == 0u);
    CHECK(match_scenarios(s3, "PC-9") == (1u << 3));

    std::vector<EmailRow> mails(3);
    DayEvents s4;
    for (auto& m : mails) {
      m.time = at("01/05/2010 10:00:00");
      m.to = {"someone@gmail.com"};
      m.attachments = 1;
      s4.email.push_back(&m);
    }
    CHECK(match_scenarios(s4, "PC-1") == (1u << 4));
    mails[2].attachments = 0;
    CHECK(match_scenarios(s4, "PC-1") == 0u);
  }
}
