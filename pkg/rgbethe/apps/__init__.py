# rgbethe/apps: pipelines built on the solver, overlap and ED layers.
