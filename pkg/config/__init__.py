# PruneGNN Module
