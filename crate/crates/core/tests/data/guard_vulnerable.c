static void igmp_heard_query(struct in_device *in_dev, struct sk_buff *skb, int len) {
 ...
 int max_delay;
 if (len == 8) {
  ...
 } else if (IGMP_V2_SEEN(in_dev)) {
  max_delay = IGMPV3_MRC(ih3->code)*(HZ/IGMP_TIMER_SCALE);


 } else {
  ...
 }
 rcu_read_lock();
 for_each_pmc_rcu(in_dev, im) {
  ...
  igmp_start_timer(im, max_delay);
 }
 rcu_read_unlock();
}
static void igmp_start_timer(struct ip_mc_list *im,       int max_delay) {
 int tv = net_random() 
 im->tm_running = 1;
 if (!mod_timer(&im->timer, jiffies+tv+2))
  atomic_inc(&im->refcnt);
}
