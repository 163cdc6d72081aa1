#include <stdio.h>
#include <string.h>
#include "soundscape.h"

static const char *SCENARIO =
    "name = \"c_smoke\"\n"
    "start = \"2026-01-12T21:00:00\"\n"
    "duration = \"20m\"\n"
    "seed = 7\n"
    "consent = [\"room_4\"]\n";

#define CHECK(call)                                                        \
    do {                                                                   \
        SsStatus st_ = (call);                                             \
        if (st_ != SS_STATUS_OK) {                                         \
            fprintf(stderr, "%s -> %d: %s\n", #call, st_, ss_last_error()); \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    SsScenario *sc = NULL;
    SsTrace *tr = NULL;
    bool passed = false;
    char *report = NULL;

    if (ss_scenario_parse("name = 1", NULL, &sc) != SS_STATUS_SCENARIO || strlen(ss_last_error()) == 0)
        return 2;
    CHECK(ss_scenario_parse(SCENARIO, NULL, &sc));
    CHECK(ss_run(sc, &tr));
    CHECK(ss_trace_check(tr, sc, &passed, &report));
    printf("passed=%d report_bytes=%zu\n", passed, strlen(report));
    ss_string_free(report);
    ss_trace_free(tr);
    ss_scenario_free(sc);
    return passed ? 0 : 3;
}
