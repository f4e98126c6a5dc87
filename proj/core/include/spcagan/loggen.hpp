#pragma once

#include "spcagan/common.hpp"

#include <compare>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace spcagan::loggen {

// Desk-scale corpus parameters. `seed` fully determines the output.
struct CorpusSpec {
  std::size_t n_users = 20;
  std::size_t n_days = 30;
  std::size_t n_insiders = 2;
  std::set<int> scenarios{1, 2};
  std::uint64_t seed = 7;
  // Length range (inclusive) of each insider's burst of malicious days.
  std::size_t burst_min_days = 5;
  std::size_t burst_max_days = 10;
  std::int64_t start_day = 14613;  // 01/04/2010

  void validate() const;
};

enum class LogonActivity { Logon, Logoff };
enum class DeviceActivity { Connect, Disconnect };

struct LogonRow {
  Timestamp time = 0;
  std::string user;
  std::string id;
  std::string pc;
  LogonActivity activity = LogonActivity::Logon;
  auto operator<=>(const LogonRow&) const = default;
};

struct EmailRow {
  Timestamp time = 0;
  std::string user;
  std::string id;
  std::vector<std::string> to;
  std::vector<std::string> cc;
  std::int64_t size = 0;
  int attachments = 0;
  std::string content;
  auto operator<=>(const EmailRow&) const = default;
};

struct HttpRow {
  Timestamp time = 0;
  std::string user;
  std::string id;
  std::string url;
  std::string content;
  auto operator<=>(const HttpRow&) const = default;
};

struct DeviceRow {
  Timestamp time = 0;
  std::string user;
  std::string id;
  std::string pc;
  DeviceActivity activity = DeviceActivity::Connect;
  auto operator<=>(const DeviceRow&) const = default;
};

struct FileRow {
  Timestamp time = 0;
  std::string user;
  std::string id;
  std::string filename;
  std::string content;
  auto operator<=>(const FileRow&) const = default;
};

// OCEAN scores in [0, 100].
struct PsychometricRow {
  std::string user;
  std::string employee_name;
  double openness = 0, conscientiousness = 0, extraversion = 0, agreeableness = 0, neuroticism = 0;
  auto operator<=>(const PsychometricRow&) const = default;
};

// Ground truth for one injected user-day.
struct MaliciousDay {
  std::string user;
  std::int64_t day = 0;
  int scenario = 0;
  auto operator<=>(const MaliciousDay&) const = default;
};

struct ActivityLog {
  std::vector<LogonRow> logon;
  std::vector<EmailRow> email;
  std::vector<HttpRow> http;
  std::vector<DeviceRow> device;
  std::vector<FileRow> file;
  std::vector<PsychometricRow> psychometric;
  std::vector<MaliciousDay> answers;  // empty for external corpora without an answer key

  bool operator==(const ActivityLog&) const = default;

  bool empty_events() const;
  // Canonical order: every collection sorted by its full field tuple (time first).
  void sort();
  std::set<std::string> users() const;
};

struct ParseResult {
  ActivityLog log;
  std::map<std::string, std::size_t> skipped;  // file name -> malformed rows skipped
  std::vector<std::string> files_read;

  std::size_t total_skipped() const;
};

ActivityLog generate_corpus(const CorpusSpec& spec);

// One CSV per resource plus answers.csv (when answers are present).
void write_cert_csv(const ActivityLog& log, const std::filesystem::path& dir);
ParseResult parse_cert_csv(const std::filesystem::path& dir);

// In-memory concatenation of every CSV that write_cert_csv would emit.
std::string serialize(const ActivityLog& log);

// Scenario signatures --------------------------------------------------------
//
//  1  exfiltration: after-hours logon, after-hours device connect, at least one
//     after-hours file event and a visit to a leak site, all on the same day.
//  2  IP theft:     >= 3 job-site visits, a device connect and >= 5 document
//     file events on the same day.
//  3  sabotage:     a known sabotage-tool file and an after-hours logon on a PC
//     other than the user's home PC (most frequent logon PC).
//  4  IP theft via mail: >= 3 emails carrying attachments with a personal
//     webmail recipient.

inline constexpr std::string_view kCompanyDomain = "dtaa.com";
const std::vector<std::string>& leak_domains();
const std::vector<std::string>& job_domains();
const std::vector<std::string>& personal_mail_domains();
const std::vector<std::string>& sabotage_tools();

bool is_document_file(std::string_view filename);
std::string url_domain(std::string_view url);
std::string mail_domain(std::string_view address);

// Events of one user on one day, as seen by the rule templates.
struct DayEvents {
  std::vector<const LogonRow*> logon;
  std::vector<const EmailRow*> email;
  std::vector<const HttpRow*> http;
  std::vector<const DeviceRow*> device;
  std::vector<const FileRow*> file;
};

// Bitmask of matched scenarios (bit s set for scenario s).
unsigned match_scenarios(const DayEvents& day, std::string_view home_pc);

// Applies the rule templates to every user-day; at most one hit per user-day
// (lowest matching scenario id). Sorted by (user, day).
std::vector<MaliciousDay> detect_scenarios(const ActivityLog& log);

}  // namespace spcagan::loggen
