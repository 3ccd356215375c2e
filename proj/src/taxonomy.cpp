#include "protoecg/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "protoecg/errors.hpp"

namespace protoecg {
namespace {

struct CodeEntry {
  const char* code;
  const char* description;
};

constexpr CodeEntry kRhythm[] = {
    {"1AVB", "first degree AV block"},
    {"2AVB", "second degree AV block"},
    {"3AVB", "third degree AV block"},
    {"AFIB", "atrial fibrillation"},
    {"AFLT", "atrial flutter"},
    {"BIGU", "bigeminal pattern (unknown origin, SV or ventricular)"},
    {"IVCD", "nonspecific intraventricular conduction disturbance"},
    {"PACE", "artificial pacemaker"},
    {"PSVT", "paroxysmal supraventricular tachycardia"},
    {"SARRH", "sinus arrhythmia"},
    {"SBRAD", "sinus bradycardia"},
    {"SR", "sinus rhythm"},
    {"STACH", "sinus tachycardia"},
    {"SVARR", "supraventricular arrhythmia"},
    {"SVTAC", "supraventricular tachycardia"},
    {"TRIGU", "trigeminal pattern (unknown origin, SV or ventricular)"},
};

constexpr CodeEntry kMorphology[] = {
    {"ABQRS", "abnormal QRS"},
    {"ALMI", "anterolateral myocardial infarction"},
    {"AMI", "anterior myocardial infarction"},
    {"ANEUR", "ST-T changes from ventricular aneurysm"},
    {"ASMI", "anteroseptal myocardial infarction"},
    {"CLBBB", "complete left bundle branch block"},
    {"CRBBB", "complete right bundle branch block"},
    {"HVOLT", "high QRS voltage"},
    {"ILBBB", "incomplete left bundle branch block"},
    {"ILMI", "inferolateral myocardial infarction"},
    {"IMI", "inferior myocardial infarction"},
    {"INJAL", "injury in anterolateral leads"},
    {"INJAS", "injury in anteroseptal leads"},
    {"INJIL", "injury in inferolateral leads"},
    {"INJIN", "injury in inferior leads"},
    {"INJLA", "injury in lateral leads"},
    {"INVT", "inverted T waves"},
    {"IPLMI", "inferoposterolateral myocardial infarction"},
    {"IPMI", "inferoposterior myocardial infarction"},
    {"IRBBB", "incomplete right bundle branch block"},
    {"ISCAL", "ischemia in anterolateral leads"},
    {"ISCAN", "ischemia in anterior leads"},
    {"ISCAS", "ischemia in anteroseptal leads"},
    {"ISCIL", "ischemia in inferolateral leads"},
    {"ISCIN", "ischemia in inferior leads"},
    {"ISCLA", "ischemia in lateral leads"},
    {"ISC_", "nonspecific ischemia"},
    {"LAFB", "left anterior fascicular block"},
    {"LAO/LAE", "left atrial overload/enlargement"},
    {"LMI", "lateral myocardial infarction"},
    {"LNGQT", "long QT interval"},
    {"LOWT", "low amplitude T waves"},
    {"LPFB", "left posterior fascicular block"},
    {"LPR", "prolonged PR interval"},
    {"LVH", "left ventricular hypertrophy"},
    {"LVOLT", "low QRS voltage"},
    {"NDT", "nondiagnostic T abnormalities"},
    {"NST_", "nonspecific ST changes"},
    {"NT_", "nonspecific T wave changes"},
    {"PAC", "premature atrial complex"},
    {"PMI", "posterior myocardial infarction"},
    {"PRC(S)", "premature complexes"},
    {"PVC", "premature ventricular complex"},
    {"QWAVE", "Q waves present"},
    {"RAO/RAE", "right atrial overload/enlargement"},
    {"RVH", "right ventricular hypertrophy"},
    {"SEHYP", "septal hypertrophy"},
    {"STD_", "ST depression"},
    {"STE_", "ST elevation"},
    {"TAB_", "T wave abnormality"},
    {"VCLVH", "voltage criteria for LVH"},
    {"WPW", "Wolff-Parkinson-White syndrome"},
};

constexpr CodeEntry kGlobal[] = {
    {"DIG", "digitalis effect"},
    {"EL", "electrolyte disturbance or drug effect"},
    {"NORM", "normal ECG"},
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string_view branch_name(Branch b) {
  switch (b) {
    case Branch::Rhythm:
      return "rhythm";
    case Branch::Morphology:
      return "morph";
    case Branch::Global:
      return "global";
  }
  return "unknown";
}

Branch parse_branch(std::string_view name) {
  const std::string n = lower(name);
  if (n == "rhythm" || n == "1d") return Branch::Rhythm;
  if (n == "morph" || n == "morphology" || n == "partial") return Branch::Morphology;
  if (n == "global") return Branch::Global;
  throw ConfigurationError("unknown branch '" + std::string(name) + "'");
}

const LabelTaxonomy& LabelTaxonomy::standard() {
  static const LabelTaxonomy taxonomy;
  return taxonomy;
}

LabelTaxonomy::LabelTaxonomy() {
  auto add = [this](const auto& entries, Branch b) {
    for (const CodeEntry& e : entries) {
      by_branch_[static_cast<int>(b)].push_back(static_cast<int>(codes_.size()));
      codes_.emplace_back(e.code);
      descriptions_.emplace_back(e.description);
      branch_of_.push_back(b);
    }
  };
  add(kRhythm, Branch::Rhythm);
  add(kMorphology, Branch::Morphology);
  add(kGlobal, Branch::Global);
}

std::optional<int> LabelTaxonomy::find(std::string_view code) const {
  for (int i = 0; i < size(); ++i) {
    if (codes_[i] == code) return i;
  }
  // PTB-XL spells the nonspecific codes with a trailing underscore; accept both forms.
  if (!code.empty() && code.back() != '_') {
    const std::string alt = std::string(code) + "_";
    for (int i = 0; i < size(); ++i) {
      if (codes_[i] == alt) return i;
    }
  }
  return std::nullopt;
}

int LabelTaxonomy::index_of(std::string_view code) const {
  if (auto i = find(code)) return *i;
  throw TaxonomyError("unknown diagnostic code '" + std::string(code) + "'");
}

Branch LabelTaxonomy::branch_of(std::string_view code) const {
  return branch_of_[index_of(code)];
}

}  // namespace protoecg
