#include <stdio.h>
#include "primtrack.h"

int main(void) {
    PtConfig *cfg = NULL;
    if (pt_config_from_toml("[world]\nempty = true\n", &cfg) != PT_STATUS_OK) {
        fprintf(stderr, "%s\n", pt_last_error());
        return 1;
    }
    if (pt_config_from_toml("nope = 1", &cfg) != PT_STATUS_CONFIG) return 2;
    PtWorld *world = NULL;
    PtPlanner *planner = NULL;
    PtPlan *plan = NULL;
    if (pt_world_build(cfg, 0, &world) != PT_STATUS_OK) return 3;
    if (pt_planner_new(cfg, &planner) != PT_STATUS_OK) return 4;
    PtState start = {{0.0, 0.0, 2.0}, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
    double goal[3] = {40.0, 0.0, 2.0};
    if (pt_plan_navigation(planner, world, &start, 0.0, goal, 0.3, &plan) != PT_STATUS_OK) return 5;
    double horizon = 0.0, end[3];
    pt_plan_horizon(plan, &horizon);
    if (pt_plan_sample(plan, horizon, 0, end) != PT_STATUS_OK) return 6;
    printf("%.3f %.3f %.3f %.3f\n", horizon, end[0], end[1], end[2]);
    pt_plan_free(plan);
    pt_planner_free(planner);
    pt_world_free(world);
    pt_config_free(cfg);
    return end[0] > 3.0 ? 0 : 7;
}
