#include <stdio.h>
#include <string.h>

#include "mvmc.h"

#define CHECK(expr)                                                          \
  do {                                                                       \
    MvmcStatus s_ = (expr);                                                  \
    if (s_ != MVMC_STATUS_OK) {                                              \
      fprintf(stderr, "%s failed (%d): %s\n", #expr, s_, mvmc_last_error()); \
      return 1;                                                              \
    }                                                                        \
  } while (0)

int main(void) {
  MvmcModel *model = NULL;
  MvmcFunctional *phi = NULL;
  MvmcSchedule *schedule = NULL;
  MvmcReport *report = NULL;
  char *hex = NULL;
  double estimate = 0.0;
  uint64_t cost = 0;

  CHECK(mvmc_model_mean_field_ou(1.0, 1.0, 0.0, 0.5, &model));
  CHECK(mvmc_functional_new("second-moment", 1, &phi));
  CHECK(mvmc_schedule_from_epsilon("amlmc-euler", 0.2, 1.0, 1, &schedule));
  CHECK(mvmc_run("amlmc-euler", model, phi, schedule, 1, &report));
  CHECK(mvmc_report_estimate(report, &estimate));
  CHECK(mvmc_report_cost(report, &cost));
  CHECK(mvmc_report_fingerprint(report, &hex));
  printf("estimate %.6f cost %llu fingerprint %.16s\n", estimate, (unsigned long long)cost, hex);
  if (cost != 4543 || strlen(hex) != 64) {
    return 1;
  }
  if (mvmc_functional_new("nope", 1, &phi) != MVMC_STATUS_INVALID_ARGUMENT || phi != NULL) {
    return 1;
  }

  mvmc_string_free(hex);
  mvmc_report_free(report);
  mvmc_schedule_free(schedule);
  mvmc_model_free(model);
  return 0;
}
