#include "spcagan/loggen.hpp"

#include <algorithm>
#include <map>

namespace spcagan::loggen {

const std::vector<std::string>& leak_domains() {
  static const std::vector<std::string> v{"wikileaks.org", "leakdrop.net", "pastebin-dump.com"};
  return v;
}

const std::vector<std::string>& job_domains() {
  static const std::vector<std::string> v{"careerbuilder.com", "monster.com", "indeed.com",
                                          "jobhuntersdatabase.com", "linkedin-jobs.com"};
  return v;
}

const std::vector<std::string>& personal_mail_domains() {
  static const std::vector<std::string> v{"gmail.com", "yahoo.com", "hotmail.com", "comcast.net"};
  return v;
}

const std::vector<std::string>& sabotage_tools() {
  static const std::vector<std::string> v{"keylogger.exe", "netcat.exe", "wiper.exe", "rootkit.exe"};
  return v;
}

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool contains(const std::vector<std::string>& v, std::string_view s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::string_view basename(std::string_view path) {
  const auto p = path.find_last_of("\\/");
  return p == std::string_view::npos ? path : path.substr(p + 1);
}

}  // namespace

bool is_document_file(std::string_view filename) {
  for (std::string_view ext : {".doc", ".docx", ".pdf", ".txt", ".xls", ".xlsx"}) {
    if (ends_with(filename, ext)) return true;
  }
  return false;
}

std::string url_domain(std::string_view url) {
  auto p = url.find("://");
  if (p != std::string_view::npos) url.remove_prefix(p + 3);
  url = url.substr(0, url.find('/'));
  if (url.substr(0, 4) == "www.") url.remove_prefix(4);
  return std::string(url);
}

std::string mail_domain(std::string_view address) {
  const auto p = address.find('@');
  return p == std::string_view::npos ? std::string() : std::string(address.substr(p + 1));
}

unsigned match_scenarios(const DayEvents& day, std::string_view home_pc) {
  unsigned mask = 0;

  const bool ah_logon = std::any_of(day.logon.begin(), day.logon.end(), [](const LogonRow* r) {
    return r->activity == LogonActivity::Logon && is_after_hours(r->time);
  });
  const bool ah_connect = std::any_of(day.device.begin(), day.device.end(), [](const DeviceRow* r) {
    return r->activity == DeviceActivity::Connect && is_after_hours(r->time);
  });
  const bool ah_file = std::any_of(day.file.begin(), day.file.end(),
                                   [](const FileRow* r) { return is_after_hours(r->time); });
  const bool leak = std::any_of(day.http.begin(), day.http.end(),
                                [](const HttpRow* r) { return contains(leak_domains(), url_domain(r->url)); });
  if (ah_logon && ah_connect && ah_file && leak) mask |= 1u << 1;

  const auto jobs = std::count_if(day.http.begin(), day.http.end(),
                                  [](const HttpRow* r) { return contains(job_domains(), url_domain(r->url)); });
  const bool connect = std::any_of(day.device.begin(), day.device.end(),
                                   [](const DeviceRow* r) { return r->activity == DeviceActivity::Connect; });
  const auto docs = std::count_if(day.file.begin(), day.file.end(),
                                  [](const FileRow* r) { return is_document_file(r->filename); });
  if (jobs >= 3 && connect && docs >= 5) mask |= 1u << 2;

  const bool tool = std::any_of(day.file.begin(), day.file.end(), [](const FileRow* r) {
    return contains(sabotage_tools(), basename(r->filename));
  });
  const bool foreign_ah_logon = std::any_of(day.logon.begin(), day.logon.end(), [&](const LogonRow* r) {
    return r->activity == LogonActivity::Logon && is_after_hours(r->time) && r->pc != home_pc;
  });
  if (tool && foreign_ah_logon) mask |= 1u << 3;

  const auto personal = std::count_if(day.email.begin(), day.email.end(), [](const EmailRow* r) {
    if (r->attachments < 1) return false;
    auto personal_addr = [](const std::string& a) { return contains(personal_mail_domains(), mail_domain(a)); };
    return std::any_of(r->to.begin(), r->to.end(), personal_addr) ||
           std::any_of(r->cc.begin(), r->cc.end(), personal_addr);
  });
  if (personal >= 3) mask |= 1u << 4;

  return mask;
}

std::vector<MaliciousDay> detect_scenarios(const ActivityLog& log) {
  using Key = std::pair<std::string, std::int64_t>;
  std::map<Key, DayEvents> days;
  std::map<std::string, std::map<std::string, std::size_t>> pc_counts;

  for (const auto& r : log.logon) {
    days[{r.user, day_of(r.time)}].logon.push_back(&r);
    if (r.activity == LogonActivity::Logon) ++pc_counts[r.user][r.pc];
  }
  for (const auto& r : log.email) days[{r.user, day_of(r.time)}].email.push_back(&r);
  for (const auto& r : log.http) days[{r.user, day_of(r.time)}].http.push_back(&r);
  for (const auto& r : log.device) days[{r.user, day_of(r.time)}].device.push_back(&r);
  for (const auto& r : log.file) days[{r.user, day_of(r.time)}].file.push_back(&r);

  std::map<std::string, std::string> home;
  for (const auto& [user, counts] : pc_counts) {
    // std::map iteration gives the lexicographically smallest pc on ties.
    std::size_t best = 0;
    for (const auto& [pc, n] : counts) {
      if (n > best) {
        best = n;
        home[user] = pc;
      }
    }
  }

  std::vector<MaliciousDay> hits;
  for (const auto& [key, ev] : days) {
    const unsigned mask = match_scenarios(ev, home[key.first]);
    if (mask == 0) continue;
    int s = 1;
    while (!(mask & (1u << s))) ++s;
    hits.push_back({key.first, key.second, s});
  }
  return hits;
}

}  // namespace spcagan::loggen
