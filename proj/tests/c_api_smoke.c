/* Compiled as C99: proves the public header needs no C++ compiler. */
#include <stdio.h>
#include <string.h>

#include "ctnav/c_api.h"

static int failures = 0;

static void expect(int cond, const char* what) {
  if (!cond) {
    fprintf(stderr, "FAIL: %s\n", what);
    ++failures;
  }
}

int main(void) {
  expect(strcmp(ctnav_version(), "0.1.0") == 0, "version string");
  expect(strcmp(ctnav_last_error(), "") == 0, "no error before any call");

  ctnav_run_options opts;
  ctnav_run_options_init(&opts);
  expect(opts.tight == 1 && opts.lag_s == 3.0, "option defaults");

  ctnav_scenario* scn = NULL;
  expect(ctnav_scenario_parse("duration_s = -1.0", &scn) == 2, "bad scenario rejected");
  expect(scn == NULL, "handle stays NULL on failure");
  expect(strlen(ctnav_last_error()) > 0, "error message populated");

  const char* text =
      "duration_s = 1.0\n"
      "[[trajectory.segment]]\n"
      "duration = 1.0\n"
      "nu = [1.0, 0.0, 0.0]\n"
      "[pvt]\n"
      "rate_hz = 10.0\n";
  expect(ctnav_scenario_parse(text, &scn) == 0, "minimal scenario parses");
  expect(scn != NULL, "handle set on success");
  ctnav_scenario_free(scn);
  ctnav_scenario_free(NULL); /* must tolerate NULL */

  if (failures == 0) printf("c_api_smoke: ok\n");
  return failures == 0 ? 0 : 1;
}
