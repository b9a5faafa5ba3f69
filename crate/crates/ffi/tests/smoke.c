/* Drives the lane-assist update through the C interface.
 * usage: smoke <corpus-dir> <model: 0|1>
 * prints the answer and exits 0 if accepted, 1 if rejected, 2 on error. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "admit.h"

static char *slurp(const char *dir, const char *name) {
    char path[4096];
    snprintf(path, sizeof path, "%s/%s", dir, name);
    FILE *f = fopen(path, "rb");
    if (!f) {
        fprintf(stderr, "cannot open %s\n", path);
        exit(2);
    }
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    fseek(f, 0, SEEK_SET);
    char *buf = malloc((size_t)n + 1);
    if (fread(buf, 1, (size_t)n, f) != (size_t)n) {
        exit(2);
    }
    buf[n] = '\0';
    fclose(f);
    return buf;
}

static void check(AdmitStatus st, const char *what) {
    if (st != ADMIT_STATUS_OK) {
        const char *msg = admit_last_error();
        fprintf(stderr, "%s failed (%d): %s\n", what, (int)st, msg ? msg : "?");
        exit(2);
    }
}

int main(int argc, char **argv) {
    if (argc != 3) {
        return 2;
    }
    const char *dir = argv[1];
    AdmitModel model = atoi(argv[2]) ? ADMIT_MODEL_SINGLE_BLOCKING : ADMIT_MODEL_BUSY_WINDOW;
    char *repo = slurp(dir, "services.repo");
    char *platform = slurp(dir, "platform.txt");
    AdmitSession *s = NULL;
    check(admit_session_new(repo, platform, &s), "session");

    const char *deployed[] = {"contracts/P.contract", "contracts/T.contract", "contracts/O1.contract",
                              "contracts/O2.contract"};
    for (size_t i = 0; i < sizeof deployed / sizeof *deployed; i++) {
        char *c = slurp(dir, deployed[i]);
        check(admit_session_add_contract(s, c), deployed[i]);
        free(c);
    }
    char *cfg = slurp(dir, "current.cfg");
    check(admit_session_set_config(s, cfg), "config");

    const char *uploads[] = {"update/S.contract", "update/L.contract"};
    for (size_t i = 0; i < 2; i++) {
        char *c = slurp(dir, uploads[i]);
        check(admit_session_request_add(s, c), uploads[i]);
        free(c);
    }
    bool accepted = false;
    check(admit_session_negotiate(s, model, &accepted), "negotiate");
    fputs(admit_session_answer(s), stdout);

    if (admit_session_request_remove(NULL, "X") != ADMIT_STATUS_NULL_ARGUMENT || admit_last_error() == NULL) {
        return 2;
    }
    admit_session_free(s);
    free(repo);
    free(platform);
    free(cfg);
    return accepted ? 0 : 1;
}
